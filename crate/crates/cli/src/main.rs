use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crm_api::{HypotheticalOutcome, OutcomeInput, WhatIfRequest};
use crm_client::CrmClient;
use crm_core::partition::compute_partition;
use crm_core::simulator::operating_characteristics;
use crm_core::{DesignConfig, OperatingCharacteristics, Scenario};
use serde::Serialize;
use uuid::Uuid;

#[derive(Parser)]
#[command(name = "crm", version, about = "Dose-finding with the continual reassessment method")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trial-session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory for session event logs; in-memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Work with sessions on a running service.
    Session {
        #[arg(long, env = "CRM_URL", default_value = "http://127.0.0.1:8080", global = true)]
        url: String,
        #[command(subcommand)]
        action: SessionAction,
    },
    /// Operating characteristics of a design over a scenario bank.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        /// One scenario object or an array of them.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Base seed; defaults to each scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter intervals on which each level is recommended.
    Partition {
        #[arg(long)]
        design: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Subcommand)]
enum SessionAction {
    /// Create a session from a design document.
    New {
        #[arg(long)]
        design: PathBuf,
    },
    /// Print a session, or one of its views.
    Show {
        id: Uuid,
        #[arg(long, value_enum, default_value_t = View::Session)]
        view: View,
    },
    /// Record the next patient's outcome.
    Outcome(OutcomeArgs),
    /// Recommendation after hypothetical outcomes, without recording them.
    WhatIf {
        id: Uuid,
        /// `[LEVEL:]tox` or `[LEVEL:]ok`; without a level the patient gets
        /// the level recommended at that point.
        #[arg(required = true)]
        outcomes: Vec<String>,
        #[arg(long)]
        next_group: Option<u8>,
    },
    /// Close a session to further outcomes.
    Close {
        id: Uuid,
        #[arg(long)]
        reason: Option<String>,
    },
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Session,
    Estimates,
    Recommendation,
    Partition,
    Audit,
}

#[derive(Args)]
struct OutcomeArgs {
    id: Uuid,
    /// One-based dose level given.
    #[arg(long)]
    level: usize,
    #[arg(long)]
    tox: bool,
    #[arg(long)]
    grade: Option<u8>,
    #[arg(long)]
    response: Option<bool>,
    #[arg(long)]
    group: Option<u8>,
    /// Accept a level other than the recommended one.
    #[arg(long = "override")]
    override_level: bool,
    #[arg(long)]
    next_group: Option<u8>,
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { port, host, data } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .init();
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            crm_service::serve(addr, data).await?;
        }
        Command::Session { url, action } => session(CrmClient::new(url), action).await?,
        Command::Simulate { design, scenario, replicates, seed, out } => {
            for path in simulate(&design, &scenario, replicates, seed, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Partition { design, format } => print!("{}", partition(&design, format)?),
    }
    Ok(())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn session(client: CrmClient, action: SessionAction) -> Result<()> {
    match action {
        SessionAction::New { design } => {
            let doc: serde_json::Value = read_json(&design)?;
            print_json(&client.create_session(&doc).await?)
        }
        SessionAction::Show { id, view } => match view {
            View::Session => print_json(&client.session(id).await?),
            View::Estimates => print_json(&client.estimates(id).await?),
            View::Recommendation => print_json(&client.recommendation(id, None).await?),
            View::Partition => print_json(&client.partition(id).await?),
            View::Audit => print_json(&client.audit(id).await?),
        },
        SessionAction::Outcome(a) => {
            let input = OutcomeInput {
                level: a.level,
                toxicity: a.tox,
                grade: a.grade,
                response: a.response,
                group: a.group,
                override_level: a.override_level,
                next_group: a.next_group,
            };
            print_json(&client.record_outcome(a.id, &input).await?)
        }
        SessionAction::WhatIf { id, outcomes, next_group } => {
            let outcomes = outcomes.iter().map(|s| parse_hypothetical(s)).collect::<Result<Vec<_>>>()?;
            print_json(&client.what_if(id, &WhatIfRequest { outcomes, next_group }).await?)
        }
        SessionAction::Close { id, reason } => print_json(&client.close(id, reason).await?),
        SessionAction::List => print_json(&client.list_sessions().await?),
    }
}

fn parse_hypothetical(s: &str) -> Result<HypotheticalOutcome> {
    let (level, kind) = match s.split_once(':') {
        Some((l, k)) => (Some(l.parse::<usize>().with_context(|| format!("bad level in {s:?}"))?), k),
        None => (None, s),
    };
    let toxicity = match kind {
        "tox" => true,
        "ok" => false,
        _ => bail!("outcome {s:?} is not [LEVEL:]tox or [LEVEL:]ok"),
    };
    Ok(HypotheticalOutcome { level, ..HypotheticalOutcome::at_recommended(toxicity) })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_design(path: &Path) -> Result<DesignConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DesignConfig::from_json(&text).with_context(|| format!("design {}", path.display()))
}

fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let v: serde_json::Value = read_json(path)?;
    let bank = match v {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    bank.into_iter()
        .enumerate()
        .map(|(i, s)| {
            serde_json::from_value(s).with_context(|| format!("scenario {} in {}", i + 1, path.display()))
        })
        .collect()
}

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a Scenario,
    base_seed: u64,
    target: f64,
    operating_characteristics: &'a OperatingCharacteristics,
}

/// Writes `<name>.json` and `<name>.csv` per scenario and returns the paths.
fn simulate(
    design: &Path,
    scenarios: &Path,
    replicates: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let config = read_design(design)?;
    let model = config.working_model()?;
    let bank = read_scenarios(scenarios)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (i, scenario) in bank.iter().enumerate() {
        let name = scenario.name.clone().unwrap_or_else(|| format!("scenario-{}", i + 1));
        let base_seed = seed.unwrap_or(scenario.seed);
        let oc = operating_characteristics(&config.design, &model, scenario, replicates, base_seed)
            .with_context(|| format!("simulating {name}"))?;

        let json_path = out.join(format!("{name}.json"));
        let report =
            Report { scenario, base_seed, target: config.design.target, operating_characteristics: &oc };
        fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;

        let csv_path = out.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["level", "label", "true_toxicity", "recommended", "allocated"])?;
        for (level, rec, alloc) in oc.per_dose_rows() {
            w.write_record([
                level.to_string(),
                model.skeleton().labels()[level - 1].clone(),
                scenario.true_tox[level - 1].to_string(),
                rec.to_string(),
                alloc.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(json_path);
        written.push(csv_path);
    }
    Ok(written)
}

fn partition(design: &Path, format: Format) -> Result<String> {
    let config = read_design(design)?;
    let model = config.working_model()?;
    let p = compute_partition(&model, config.design.target, model.bounds())?;
    Ok(match format {
        Format::Tsv => p.to_tsv(),
        Format::Json => serde_json::to_string_pretty(&crm_api::PartitionView::from_core(&p, None))? + "\n",
    })
}
