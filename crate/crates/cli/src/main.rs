//! `mlcw` -- encode half-precision weight files into a modeled 2-bit MLC
//! buffer, inject soft errors, and run the census/energy/error/accuracy
//! experiments.
//!
//! Exit codes: 0 success, 2 usage error, 3 file or parse error, 4 domain
//! error (values outside the encodable range), 5 verification failure.

use clap::{Parser, Subcommand, ValueEnum};
use mlcw_core::analysis::{
    census, energy_comparison, sse_sweep, write_census_csv, write_energy_csv, write_sse_csv,
};
use mlcw_core::codec::{
    self, apply_scheme, metadata_overhead, read_buffer, round_tail, select_scheme, write_buffer,
    CodecError, FormatError, Scheme, SchemeSet, GRANULARITIES,
};
use mlcw_core::halffloat::{real_to_half, CellHistogram, HalfError, HalfWord};
use mlcw_core::memdevice::{
    default_cost_table, inject_faults, parse_cost_table, CostTable, DeviceError, FaultSpec,
    SOFT_ERROR_P_HIGH,
};
use mlcw_core::tinynn::{
    make_dataset, run_accuracy_experiment, train, write_accuracy_csv, ExperimentConfig,
    HarnessError,
};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mlcw",
    version,
    about = "Cell-aware storage codec and soft-error simulator for half-precision weight buffers",
    long_about = "Encodes half-precision weights for a modeled 2-bit MLC buffer using sign-bit \
                  duplication plus per-group content reformation (no-change / rotate / round), \
                  then quantifies soft-error resilience and content-dependent read/write cost."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a weight file into an MLCW buffer file.
    Encode {
        /// Input weight file (flat binary; see --format).
        input: PathBuf,
        /// Weights per metadata group.
        #[arg(long, default_value_t = 1, value_parser = parse_granularity)]
        granularity: usize,
        /// Enabled schemes: `all`, `none` (unprotected raw storage), or a
        /// comma list from nochange,rotate,round.
        #[arg(long, default_value = "all", value_parser = parse_scheme_set)]
        schemes: SchemeSet,
        /// Input element format.
        #[arg(long, value_enum, default_value_t = WeightFormat::F16le)]
        format: WeightFormat,
        /// Output buffer file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode an MLCW buffer file back to an f16le weight file.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Inject soft errors into a buffer file.
    Inject {
        input: PathBuf,
        /// Per-cell flip probability for intermediate patterns.
        #[arg(long, default_value_t = SOFT_ERROR_P_HIGH, value_parser = parse_probability)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Cell-pattern census (census.csv) of the baseline and hybrid systems.
    Stats {
        input: PathBuf,
        #[arg(long, default_value = "1,2,4,8,16", value_parser = parse_granularities, value_delimiter = None)]
        granularities: std::vec::Vec<usize>,
        #[arg(long, value_enum, default_value_t = WeightFormat::F16le)]
        format: WeightFormat,
        /// Output path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Read/write energy comparison (energy.csv) against raw storage.
    Energy {
        input: PathBuf,
        #[arg(long, default_value = "1,2,4,8,16", value_parser = parse_granularities, value_delimiter = None)]
        granularities: std::vec::Vec<usize>,
        /// Cost table override file (key=value lines).
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = WeightFormat::F16le)]
        format: WeightFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Single-bit-flip squared-error sweep (sse.csv) over random weights.
    Sse {
        /// Sample count.
        #[arg(long, default_value_t = 1_000_000, value_parser = parse_positive)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// MLP accuracy experiment (accuracy.csv) across storage systems.
    Accuracy {
        #[arg(long, default_value_t = SOFT_ERROR_P_HIGH, value_parser = parse_probability)]
        p: f64,
        #[arg(long, default_value_t = 1, value_parser = parse_granularity)]
        granularity: usize,
        /// Fault seeds per system.
        #[arg(long, default_value_t = 20, value_parser = parse_positive)]
        trials: usize,
        /// Drives the dataset, training and fault seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ablation: drop the sign backup from the protected systems.
        #[arg(long)]
        no_sign_protect: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the pinned golden checks; non-zero exit on any mismatch.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightFormat {
    /// 16-bit little-endian half values.
    F16le,
    /// 32-bit little-endian float values, converted on load.
    F32le,
}

enum CliError {
    Parse(String),
    Domain(String),
    Verify(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 3,
            CliError::Domain(_) => 4,
            CliError::Verify(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(msg) | CliError::Domain(msg) => f.write_str(msg),
            CliError::Verify(n) => write!(f, "{n} golden check(s) failed"),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> CliError {
        CliError::Domain(e.to_string())
    }
}

impl From<HalfError> for CliError {
    fn from(e: HalfError) -> CliError {
        CliError::Domain(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> CliError {
        CliError::Parse(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> CliError {
        match e {
            HarnessError::Codec(c) => c.into(),
            HarnessError::Half(h) => h.into(),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn parse_granularity(s: &str) -> Result<usize, String> {
    let g: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if GRANULARITIES.contains(&g) {
        Ok(g)
    } else {
        Err(format!(
            "granularity must be one of 1, 2, 4, 8, 16, got {g}"
        ))
    }
}

fn parse_granularities(s: &str) -> Result<std::vec::Vec<usize>, String> {
    let list = s
        .split(',')
        .map(|tok| parse_granularity(tok.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() {
        return Err("expected at least one granularity".into());
    }
    Ok(list)
}

fn parse_scheme_set(s: &str) -> Result<SchemeSet, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "all" => return Ok(SchemeSet::all()),
        "none" | "unprotected" => return Ok(SchemeSet::empty()),
        _ => {}
    }
    let mut set = SchemeSet::empty();
    for tok in s.split(',') {
        set = set.with(tok.parse::<Scheme>()?);
    }
    Ok(set)
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("probability must lie in [0, 1], got {p}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if n >= 1 {
        Ok(n)
    } else {
        Err("value must be at least 1".into())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Parse(format!("cannot write {}: {e}", path.display())))
}

/// Applies the optional `<input>.manifest` sidecar: `key: value` lines with
/// `name`, `count` and `shape` understood, unknown keys ignored.
fn check_manifest(input: &Path, elements: usize) -> Result<(), CliError> {
    let mut path = input.as_os_str().to_owned();
    path.push(".manifest");
    let path = PathBuf::from(path);
    let text = match fs::read_to_string(&path) {
        Ok(text) => text,
        Err(_) => return Ok(()),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            CliError::Parse(format!(
                "{}: line {}: expected key: value",
                path.display(),
                i + 1
            ))
        })?;
        let value = value.trim();
        match key.trim() {
            "count" => {
                let count: usize = value.parse().map_err(|_| {
                    CliError::Parse(format!("{}: bad count `{value}`", path.display()))
                })?;
                if count != elements {
                    return Err(CliError::Parse(format!(
                        "{}: manifest count {count} does not match {elements} payload elements",
                        path.display()
                    )));
                }
            }
            "shape" => {
                let dims = value
                    .split(',')
                    .map(|d| d.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| {
                        CliError::Parse(format!("{}: bad shape `{value}`", path.display()))
                    })?;
                let product: usize = dims.iter().product();
                if product != elements {
                    return Err(CliError::Parse(format!(
                        "{}: shape {value} holds {product} elements, payload has {elements}",
                        path.display()
                    )));
                }
            }
            "name" => {}
            _ => {} // unknown keys are ignored for forward compatibility
        }
    }
    Ok(())
}

fn load_weights(path: &Path, format: WeightFormat) -> Result<Vec<HalfWord>, CliError> {
    let bytes = read_bytes(path)?;
    let width = match format {
        WeightFormat::F16le => 2,
        WeightFormat::F32le => 4,
    };
    if bytes.len() % width != 0 {
        return Err(CliError::Parse(format!(
            "{}: {} bytes is not a whole number of {}-byte elements",
            path.display(),
            bytes.len(),
            width
        )));
    }
    check_manifest(path, bytes.len() / width)?;
    match format {
        WeightFormat::F16le => Ok(bytes
            .chunks_exact(2)
            .map(|b| HalfWord(u16::from_le_bytes([b[0], b[1]])))
            .collect()),
        WeightFormat::F32le => bytes
            .chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                real_to_half(v).map_err(CliError::from)
            })
            .collect(),
    }
}

fn load_costs(path: Option<&Path>) -> Result<CostTable, CliError> {
    match path {
        None => Ok(default_cost_table()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
            parse_cost_table(&text).map_err(|e: DeviceError| CliError::Parse(e.to_string()))
        }
    }
}

fn emit(output: Option<&Path>, content: &str) -> Result<(), CliError> {
    match output {
        Some(path) => write_bytes(path, content.as_bytes()),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Encode {
            input,
            granularity,
            schemes,
            format,
            output,
        } => {
            let weights = load_weights(&input, format)?;
            let buf = codec::encode_buffer(&weights, granularity, schemes)?;
            let mut bytes = Vec::new();
            write_buffer(&buf, &mut bytes)?;
            write_bytes(&output, &bytes)
        }
        Command::Decode { input, output } => {
            let buf = read_buffer(&mut read_bytes(&input)?.as_slice())?;
            let decoded = codec::decode_buffer(&buf);
            if decoded.sign_mismatches > 0 {
                eprintln!(
                    "warning: {} stored word(s) had disagreeing sign copies",
                    decoded.sign_mismatches
                );
            }
            let bytes: Vec<u8> = decoded
                .words
                .iter()
                .flat_map(|w| w.0.to_le_bytes())
                .collect();
            write_bytes(&output, &bytes)
        }
        Command::Inject {
            input,
            p,
            seed,
            output,
        } => {
            let buf = read_buffer(&mut read_bytes(&input)?.as_slice())?;
            let spec = FaultSpec::new(p, seed).map_err(|e| CliError::Domain(e.to_string()))?;
            let out = inject_faults(&buf, &spec);
            let mut bytes = Vec::new();
            write_buffer(&out, &mut bytes)?;
            write_bytes(&output, &bytes)
        }
        Command::Stats {
            input,
            granularities,
            format,
            output,
        } => {
            let weights = load_weights(&input, format)?;
            let rows = census(&weights, &granularities)?;
            let mut text = Vec::new();
            write_census_csv(&rows, &mut text).expect("writing to memory");
            emit(output.as_deref(), &String::from_utf8(text).unwrap())
        }
        Command::Energy {
            input,
            granularities,
            costs,
            format,
            output,
        } => {
            let weights = load_weights(&input, format)?;
            let table = load_costs(costs.as_deref())?;
            let rows = energy_comparison(&weights, &granularities, &table)?;
            let mut text = Vec::new();
            write_energy_csv(&rows, &mut text).expect("writing to memory");
            emit(output.as_deref(), &String::from_utf8(text).unwrap())
        }
        Command::Sse { n, seed, output } => {
            let sweep = sse_sweep(n, seed);
            let mut text = Vec::new();
            write_sse_csv(&sweep, &mut text).expect("writing to memory");
            emit(output.as_deref(), &String::from_utf8(text).unwrap())
        }
        Command::Accuracy {
            p,
            granularity,
            trials,
            seed,
            no_sign_protect,
            output,
        } => {
            let ds = make_dataset(seed);
            let model = train(&ds, seed.wrapping_add(1))?;
            let cfg = ExperimentConfig {
                p,
                granularity,
                trials,
                fault_seed_base: seed.wrapping_add(2),
                sign_protect: !no_sign_protect,
            };
            let report = run_accuracy_experiment(&model, &ds, &cfg)?;
            let mut text = Vec::new();
            write_accuracy_csv(&report, &mut text).expect("writing to memory");
            emit(output.as_deref(), &String::from_utf8(text).unwrap())
        }
        Command::Verify => verify(),
    }
}

/// One golden row of the three-scheme example table: input weight, expected
/// stored bits per scheme, expected pattern counts, expected selection.
struct GoldenRow {
    weight: f64,
    binary: &'static str,
    outputs: [(&'static str, [u64; 4]); 3],
    best: Scheme,
}

const GOLDEN_ROWS: [GoldenRow; 3] = [
    GoldenRow {
        weight: 0.004222,
        binary: "00 01 11 00 01 01 00 11",
        outputs: [
            ("00 01 11 00 01 01 00 11", [3, 3, 0, 2]),
            ("00 10 11 10 00 10 10 01", [2, 1, 4, 1]),
            ("00 01 11 00 01 01 00 00", [4, 3, 0, 1]),
        ],
        best: Scheme::NoChange,
    },
    GoldenRow {
        weight: 0.020614,
        binary: "00 10 01 01 01 00 01 11",
        outputs: [
            ("00 10 01 01 01 00 01 11", [2, 4, 1, 1]),
            ("00 11 00 10 10 10 00 11", [3, 0, 3, 2]),
            ("00 10 01 01 01 00 00 11", [3, 3, 1, 1]),
        ],
        best: Scheme::Rotate,
    },
    GoldenRow {
        weight: 0.0004982,
        binary: "00 01 00 00 00 01 01 01",
        outputs: [
            ("00 01 00 00 00 01 01 01", [4, 4, 0, 0]),
            ("00 10 10 00 00 00 10 10", [4, 0, 4, 0]),
            ("00 01 00 00 00 01 00 11", [5, 2, 0, 1]),
        ],
        best: Scheme::Round,
    },
];

/// Low-nibble rounding map: four input classes onto the cell-friendly values.
const GOLDEN_NIBBLES: [u16; 16] = [0, 0, 0, 0, 3, 3, 3, 3, 12, 12, 12, 12, 15, 15, 15, 15];

const GOLDEN_OVERHEAD: [(usize, f64); 5] = [
    (1, 0.125),
    (2, 0.0625),
    (4, 0.03125),
    (8, 0.015625),
    (16, 0.0078125),
];

fn verify() -> Result<(), CliError> {
    let mut failures = 0usize;
    let mut report = String::new();
    let mut check = |name: String, ok: bool, detail: String| {
        if ok {
            let _ = writeln!(report, "check {name}: ok");
        } else {
            failures += 1;
            let _ = writeln!(report, "check {name}: FAILED ({detail})");
        }
    };

    for (i, row) in GOLDEN_ROWS.iter().enumerate() {
        let n = i + 1;
        let word = match real_to_half(row.weight) {
            Ok(w) => w,
            Err(e) => {
                check(format!("example-row{n}"), false, e.to_string());
                continue;
            }
        };
        check(
            format!("example-row{n}-binary"),
            word.to_string() == row.binary,
            format!("expected {}, got {word}", row.binary),
        );
        for (scheme, (expected, counts)) in Scheme::PREFERENCE.iter().zip(&row.outputs) {
            let stored = match apply_scheme(word, *scheme) {
                Ok(s) => s,
                Err(e) => {
                    check(format!("example-row{n}-{scheme}"), false, e.to_string());
                    continue;
                }
            };
            let hist = CellHistogram::from_words(&[stored]);
            let got = [hist.p00, hist.p01, hist.p10, hist.p11];
            check(
                format!("example-row{n}-{scheme}"),
                stored.to_string() == *expected && got == *counts,
                format!("expected {expected} {counts:?}, got {stored} {got:?}"),
            );
        }
        let best = select_scheme(&[word]);
        check(
            format!("example-row{n}-best"),
            best.as_ref() == Ok(&row.best),
            format!("expected {}, got {best:?}", row.best),
        );
    }

    let mut bad_nibbles = Vec::new();
    for (nibble, &expected) in GOLDEN_NIBBLES.iter().enumerate() {
        let got = round_tail(HalfWord(nibble as u16)).0;
        if got != expected {
            bad_nibbles.push(format!("{nibble:04b}->{got:04b}"));
        }
    }
    check(
        "rounding-table".into(),
        bad_nibbles.is_empty(),
        bad_nibbles.join(", "),
    );

    for (g, expected) in GOLDEN_OVERHEAD {
        let got = metadata_overhead(g);
        check(
            format!("overhead-granularity-{g}"),
            got == expected,
            format!("expected {expected}, got {got}"),
        );
    }

    // Round trip of the worked example through the real file format.
    let weights: Vec<HalfWord> = GOLDEN_ROWS
        .iter()
        .map(|r| real_to_half(r.weight).unwrap())
        .collect();
    let round_trip = (|| -> Result<bool, CliError> {
        let buf = codec::encode_buffer(&weights, 1, SchemeSet::all())?;
        let mut bytes = Vec::new();
        write_buffer(&buf, &mut bytes)?;
        let back = read_buffer(&mut bytes.as_slice())?;
        let decoded = codec::decode_buffer(&back);
        Ok(
            decoded.words == vec![weights[0], weights[1], HalfWord(round_tail(weights[2]).0)]
                && decoded.sign_mismatches == 0,
        )
    })();
    check(
        "buffer-round-trip".into(),
        matches!(round_trip, Ok(true)),
        "decode of the encoded example buffer diverged".into(),
    );

    print!("{report}");
    if failures == 0 {
        println!("verify: all checks passed");
        Ok(())
    } else {
        Err(CliError::Verify(failures))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_granularity("4"), Ok(4));
        assert!(parse_granularity("3").is_err());
        assert_eq!(parse_granularities("1,16"), Ok(vec![1, 16]));
        assert!(parse_granularities("1,5").is_err());
        assert_eq!(parse_scheme_set("all"), Ok(SchemeSet::all()));
        assert_eq!(parse_scheme_set("none"), Ok(SchemeSet::empty()));
        assert_eq!(
            parse_scheme_set("nochange,rotate"),
            Ok(SchemeSet::lossless())
        );
        assert!(parse_scheme_set("spin").is_err());
        assert!(parse_probability("0.02").is_ok());
        assert!(parse_probability("1.5").is_err());
        assert!(parse_positive("0").is_err());
    }

    #[test]
    fn verify_passes_on_this_build() {
        assert!(verify().is_ok());
    }
}
