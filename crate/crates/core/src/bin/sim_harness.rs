use clap::{Args, Parser, Subcommand};
use horus_comms::crc::{framing_crc, position_crc, FRAMING_POLY, POSITION_POLY};
use horus_comms::metrics::MetricsWriter;
use horus_comms::scenario::Scenario;
use horus_comms::sim::{SimError, Simulation, EXIT_CONFIG_ERROR, EXIT_INVARIANT_VIOLATION};
use horus_comms::wire;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sim_harness", about = "Mixed-criticality UAV communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write JSON-lines metrics.
    Simulate(SimulateArgs),
    /// Encode/decode profile objects as hex.
    Codec {
        #[command(subcommand)]
        op: CodecOp,
    },
    /// Compute a CRC checksum over hex bytes.
    Crc {
        /// Polynomial: f8c9140a (framing) or 9d7f97d6 (position).
        #[arg(long)]
        poly: String,
        #[arg(long)]
        hex: String,
    },
    /// DPR debugging helpers.
    Dpr {
        #[command(subcommand)]
        op: DprOp,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's cycle count.
    #[arg(long)]
    cycles: Option<u64>,
    /// Metrics output file (JSON lines); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CodecOp {
    /// 56 data bytes in, 60-byte frame out (or 60 in: CRC recomputed).
    EncodeGps {
        #[arg(long)]
        hex: String,
    },
    /// 60-byte frame in; prints the 56 data bytes if the CRC verifies.
    DecodeGps {
        #[arg(long)]
        hex: String,
    },
    /// 60 CRC-covered bytes in (position CRC field ignored), 64-byte frame
    /// out; 64 in also accepted.
    EncodeReported {
        #[arg(long)]
        hex: String,
    },
    /// 64-byte frame in; prints the 60 CRC-covered bytes if both CRCs verify.
    DecodeReported {
        #[arg(long)]
        hex: String,
    },
}

#[derive(Subcommand)]
enum DprOp {
    /// Run a scenario and hex-dump a region's read buffer at end of run.
    Dump {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cycles: Option<u64>,
    },
}

fn fail(message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn load_scenario(path: &PathBuf, seed: Option<u64>, cycles: Option<u64>) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(cycles) = cycles {
        scenario.cycles = cycles;
    }
    scenario.validate().map_err(|e| e.to_string())?;
    Ok(scenario)
}

fn decode_hex(hex_text: &str) -> Result<Vec<u8>, String> {
    hex::decode(hex_text.trim()).map_err(|e| format!("bad hex input: {e}"))
}

fn sim_exit(err: SimError) -> ExitCode {
    match err {
        SimError::Config(e) => fail(e, EXIT_CONFIG_ERROR as u8),
        SimError::Invariant(e) => fail(e, EXIT_INVARIANT_VIOLATION as u8),
        SimError::Io(e) => fail(e, 1),
    }
}

fn run_simulate(args: SimulateArgs) -> ExitCode {
    let scenario = match load_scenario(&args.scenario, args.seed, args.cycles) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_CONFIG_ERROR as u8),
    };
    let mut sim = match Simulation::new(scenario) {
        Ok(sim) => sim,
        Err(e) => return sim_exit(e),
    };
    let result = match &args.out {
        Some(path) => {
            let file = match File::create(path) {
                Ok(f) => f,
                Err(e) => return fail(e, 1),
            };
            let mut metrics = MetricsWriter::new(BufWriter::new(file));
            sim.run(&mut metrics).and_then(|summary| {
                metrics.into_inner().flush()?;
                Ok(summary)
            })
        }
        None => {
            let stdout = std::io::stdout();
            let mut metrics = MetricsWriter::new(stdout.lock());
            sim.run(&mut metrics)
        }
    };
    match result {
        Ok(summary) => {
            eprintln!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => sim_exit(e),
    }
}

fn run_codec(op: CodecOp) -> Result<String, String> {
    match op {
        CodecOp::EncodeGps { hex } => {
            let bytes = decode_hex(&hex)?;
            let data: Vec<u8> = match bytes.len() {
                wire::GPS_DATA_LEN => bytes,
                wire::GPS_FRAME_LEN => bytes[..wire::GPS_DATA_LEN].to_vec(),
                n => return Err(format!("expected 56 or 60 bytes, got {n}")),
            };
            // parse the fields, then re-encode with a correct CRC
            let mut frame = data;
            frame.resize(wire::GPS_FRAME_LEN, 0);
            let crc = framing_crc(&frame[..wire::GPS_DATA_LEN]);
            frame[wire::GPS_DATA_LEN..].copy_from_slice(&crc.to_le_bytes());
            Ok(hex::encode(frame))
        }
        CodecOp::DecodeGps { hex } => {
            let bytes = decode_hex(&hex)?;
            wire::decode_gps(&bytes).map_err(|e| e.to_string())?;
            Ok(hex::encode(&bytes[..wire::GPS_DATA_LEN]))
        }
        CodecOp::EncodeReported { hex } => {
            let bytes = decode_hex(&hex)?;
            let data: Vec<u8> = match bytes.len() {
                wire::REPORTED_DATA_LEN => bytes,
                wire::REPORTED_FRAME_LEN => bytes[..wire::REPORTED_DATA_LEN].to_vec(),
                n => return Err(format!("expected 60 or 64 bytes, got {n}")),
            };
            let mut frame = data;
            let pos = position_crc(&frame[wire::POSITION_WORD_RANGE]);
            frame[wire::POSITION_CRC_OFFSET..wire::POSITION_CRC_OFFSET + 4]
                .copy_from_slice(&pos.to_le_bytes());
            let crc = framing_crc(&frame[..wire::REPORTED_DATA_LEN]);
            frame.resize(wire::REPORTED_FRAME_LEN, 0);
            frame[wire::REPORTED_DATA_LEN..].copy_from_slice(&crc.to_le_bytes());
            Ok(hex::encode(frame))
        }
        CodecOp::DecodeReported { hex } => {
            let bytes = decode_hex(&hex)?;
            wire::decode_reported(&bytes).map_err(|e| e.to_string())?;
            Ok(hex::encode(&bytes[..wire::REPORTED_DATA_LEN]))
        }
    }
}

fn run_crc(poly: &str, hex_text: &str) -> Result<String, String> {
    let bytes = decode_hex(hex_text)?;
    let checksum = match poly.trim_start_matches("0x") {
        "f8c9140a" => framing_crc(&bytes),
        "9d7f97d6" => position_crc(&bytes),
        other => {
            return Err(format!(
                "unknown polynomial {other:?} (known: {FRAMING_POLY:08x}, {POSITION_POLY:08x})"
            ))
        }
    };
    Ok(format!("{checksum:08x}"))
}

fn run_dpr_dump(
    scenario_path: PathBuf,
    region: String,
    seed: Option<u64>,
    cycles: Option<u64>,
) -> ExitCode {
    let scenario = match load_scenario(&scenario_path, seed, cycles) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_CONFIG_ERROR as u8),
    };
    let mut sim = match Simulation::new(scenario) {
        Ok(sim) => sim,
        Err(e) => return sim_exit(e),
    };
    let mut metrics = MetricsWriter::new(std::io::sink());
    if let Err(e) = sim.run(&mut metrics) {
        return sim_exit(e);
    }
    match sim.dpr().peek(&region) {
        Ok(report) => {
            println!("{}", hex::encode(report.bytes));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e, EXIT_CONFIG_ERROR as u8),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate(args) => run_simulate(args),
        Command::Codec { op } => match run_codec(op) {
            Ok(out) => {
                println!("{out}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, 1),
        },
        Command::Crc { poly, hex } => match run_crc(&poly, &hex) {
            Ok(out) => {
                println!("{out}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e, 1),
        },
        Command::Dpr { op } => match op {
            DprOp::Dump {
                scenario,
                region,
                seed,
                cycles,
            } => run_dpr_dump(scenario, region, seed, cycles),
        },
    }
}
