use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use msnp::data::{
    generate_records, load_sequence_dataset, load_trust_graph, planted_trust_graph, sequence_to_csv,
    synthetic_sequence, GeneratorSpec, PlantedSpec,
};
use msnp::harness::{
    exp_discovery_sweep, exp_prediction_curve, exp_trust_comparison, RecordsSource, TrustExperiment,
};
use msnp::predictor::{parse_rules, read_records_csv, write_records_csv, RuleSet};
use msnp::simnet::{Model, SimConfig};
use msnp::trust::Scheme;
use msnp::{Error, SemanticType};

#[derive(Debug, Parser)]
#[command(name = "msnp", version, about = "Discovery, prediction and trust experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the discovery models over a range of provider counts.
    Discover(DiscoverArgs),
    /// Measure prediction accuracy against training fraction.
    Predict(PredictArgs),
    /// Compare trust schemes on a trust graph.
    Trust(TrustArgs),
    /// Emit synthetic inputs.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    /// Provider counts.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,300,400,500")]
    n: Vec<usize>,
    /// pull, push, prefpush, hybrid or hybrid<fraction>.
    #[arg(long, value_delimiter = ',', default_value = "pull,push,prefpush")]
    models: Vec<Model>,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// `key = value` simulation config; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-run CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed-averaged CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["table1", "records", "sequence"])))]
struct PredictArgs {
    /// Draw records from the built-in five-type generator.
    #[arg(long)]
    table1: bool,
    /// Records CSV (`qid,contexts`).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Sequence CSV (`location,action,object`).
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Records per generated dataset.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Importance, filter and override rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrustArgs {
    /// Trust graph (`rater ratee level` lines or trustlet dot lines).
    #[arg(long)]
    graph: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "af,afoaf,hef,hefhef,msf,naive,exponly,creditonly,proposed"
    )]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 10)]
    min_ratings: usize,
    /// Service name every user stands for.
    #[arg(long, default_value = "profile")]
    sname: String,
    #[arg(long, default_value = "Rating")]
    stype: String,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum GenCommand {
    /// Records CSV from the five-type generator.
    Table1 {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Location/action/object sequence CSV.
    Sequence {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trust graph with planted expert raters.
    Graph {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        communities: usize,
        #[arg(long, default_value_t = 25)]
        community_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Default simulation config.
    Config {
        /// Five providers per second for 100 seconds instead of one burst.
        #[arg(long)]
        steady: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn seed_list(base: u64, count: u64) -> Vec<u64> {
    (base..base + count).collect()
}

fn discover(a: DiscoverArgs) -> Result<(), Error> {
    let config = match &a.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    let seeds = seed_list(a.seed_base, a.seeds);
    let sweep = exp_discovery_sweep(&config, &a.n, &a.models, &seeds)?;
    emit(a.out.as_deref(), &sweep.runs.to_csv())?;
    if let Some(p) = &a.summary {
        emit(Some(p), &sweep.summary.to_csv())?;
    }
    for row in &sweep.summary.rows {
        eprintln!(
            "n={} {:>9} makespan={:.1}ms",
            row.n_providers, row.model, row.makespan_ms
        );
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let rules = match &a.rules {
        Some(p) => parse_rules(&read_text(p)?)?,
        None => RuleSet::default(),
    };
    let source = if a.table1 {
        RecordsSource::Generated {
            spec: GeneratorSpec::table1(),
            n: a.n,
        }
    } else if let Some(p) = &a.records {
        let file = fs::File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        RecordsSource::Fixed {
            label: p.display().to_string(),
            records: read_records_csv(file)?,
        }
    } else {
        let p = a.sequence.as_ref().expect("clap enforces one source");
        RecordsSource::Fixed {
            label: p.display().to_string(),
            records: load_sequence_dataset(p)?,
        }
    };
    let report = exp_prediction_curve(&source, &a.fractions, &seed_list(a.seed_base, a.seeds), &rules)?;
    emit(a.out.as_deref(), &report.to_csv())?;
    for row in &report.rows {
        eprintln!(
            "f={} accuracy={:.4} ± {:.4}",
            row.fraction, row.mean_accuracy, row.std_accuracy
        );
    }
    Ok(())
}

fn trust(a: TrustArgs) -> Result<(), Error> {
    let load = load_trust_graph(&a.graph)?;
    if load.malformed > 0 || load.duplicates > 0 {
        eprintln!(
            "warning: skipped {} malformed lines, {} duplicate edges (last wins)",
            load.malformed, load.duplicates
        );
    }
    let setup = TrustExperiment {
        min_ratings: a.min_ratings,
        sname: a.sname,
        stype: SemanticType::new(a.stype),
    };
    let report = exp_trust_comparison(&load.graph, &a.schemes, setup)?;
    emit(a.out.as_deref(), &report.to_json())?;
    for row in &report.rows {
        let acc = row.accuracy.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        eprintln!("{:>10} comparable={} accuracy={acc}", row.scheme, row.comparable);
    }
    Ok(())
}

fn gen(cmd: GenCommand) -> Result<(), Error> {
    match cmd {
        GenCommand::Table1 { n, seed, out } => {
            let records = generate_records(&GeneratorSpec::table1(), n, seed)?;
            let mut buf = Vec::new();
            write_records_csv(&records, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
        }
        GenCommand::Sequence { n, seed, out } => {
            emit(out.as_deref(), &sequence_to_csv(&synthetic_sequence(n, seed)))
        }
        GenCommand::Graph {
            seed,
            communities,
            community_size,
            out,
        } => {
            let spec = PlantedSpec {
                seed,
                communities,
                community_size,
                ..PlantedSpec::default()
            };
            emit(out.as_deref(), &planted_trust_graph(&spec)?.to_text())
        }
        GenCommand::Config { steady, out } => {
            let cfg = if steady {
                SimConfig::steady_default()
            } else {
                SimConfig::default()
            };
            emit(out.as_deref(), &cfg.to_text())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Discover(a) => discover(a),
        Command::Predict(a) => predict(a),
        Command::Trust(a) => trust(a),
        Command::Gen(g) => gen(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
