use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qnet::layout::{compute_layout, LayoutParams};
use qnet::randreq::{Simulation, SimulationOptions, SimulationReport};
use qnet::serialization::{
    export_layout, export_simulation, export_templates, export_topology, import_templates,
    import_topology, import_workspace, read_file, write_results, RunInputs,
};
use qnet::service::{self, ServiceConfig, Workspace};
use qnet::templates::TemplateStore;

#[derive(Parser)]
#[command(name = "qnet", version, about = "Quantum network workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a topology and template file, printing every problem found.
    Validate { topology: PathBuf, templates: PathBuf },
    /// Compute node positions with the spring embedder.
    Layout {
        topology: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Layout parameters as JSON; unspecified fields keep their defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write positions here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a random-request simulation and store its results.
    Simulate {
        topology: PathBuf,
        templates: PathBuf,
        simulation: PathBuf,
        /// Overrides the seed in the simulation file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "QNET_OUTPUT_ROOT", default_value = "runs")]
        output_root: PathBuf,
        /// Replace an existing run directory of the same name.
        #[arg(long)]
        force: bool,
        /// Let detector dark counts herald links.
        #[arg(long)]
        dark_counts: bool,
    },
    /// Serve the HTTP API (and the UI bundle, if given).
    Serve {
        #[arg(long, env = "QNET_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "QNET_OUTPUT_ROOT", default_value = "runs")]
        output_root: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_runs: usize,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Initial topology file.
        #[arg(long, requires = "templates")]
        topology: Option<PathBuf>,
        /// Initial template file.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { topology, templates } => validate(&topology, &templates),
        Command::Layout {
            topology,
            seed,
            params,
            out,
        } => layout(&topology, seed, params.as_deref(), out.as_deref()),
        Command::Simulate {
            topology,
            templates,
            simulation,
            seed,
            output_root,
            force,
            dark_counts,
        } => simulate(&topology, &templates, &simulation, seed, &output_root, force, dark_counts),
        Command::Serve {
            bind,
            output_root,
            max_runs,
            static_dir,
            topology,
            templates,
        } => serve(bind, output_root, max_runs, static_dir, topology, templates),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(messages) => {
            for m in messages {
                eprintln!("{m}");
            }
            ExitCode::from(1)
        }
    }
}

type CliResult = Result<(), Vec<String>>;

fn one<E: ToString>(e: E) -> Vec<String> {
    vec![e.to_string()]
}

fn validate(topology: &Path, templates: &Path) -> CliResult {
    let topo_text = read_file(topology).map_err(one)?;
    let tmpl_text = read_file(templates).map_err(one)?;
    let mut problems = Vec::new();
    let store = import_templates(&tmpl_text)
        .map_err(|e| problems.push(format!("{}: {e}", templates.display())))
        .ok();
    let topo = import_topology(&topo_text)
        .map_err(|e| problems.push(format!("{}: {e}", topology.display())))
        .ok();
    if let (Some(store), Some(topo)) = (store, topo) {
        if let Err(e) = store.check_nodes(&topo) {
            problems.push(format!("{}: {}: {e}", topology.display(), e.code()));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn layout(topology: &Path, seed: u64, params: Option<&Path>, out: Option<&Path>) -> CliResult {
    let topo = import_topology(&read_file(topology).map_err(one)?).map_err(one)?;
    let params = match params {
        Some(p) => serde_json::from_str::<LayoutParams>(&read_file(p).map_err(one)?)
            .map_err(|e| one(format!("{}: {e}", p.display())))?,
        None => LayoutParams::default(),
    };
    let result = compute_layout(&topo, &params, seed).map_err(|e| one(format!("{}: {e}", e.code())))?;
    let text = export_layout(&result);
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| one(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(
    topology: &Path,
    templates: &Path,
    simulation: &Path,
    seed: Option<u64>,
    output_root: &Path,
    force: bool,
    dark_counts: bool,
) -> CliResult {
    let texts = [topology, templates, simulation]
        .map(|p| read_file(p).map_err(one))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let ws = import_workspace(&texts[0], &texts[1], Some(&texts[2])).map_err(one)?;
    let mut file = ws.simulation.expect("simulation file given");
    if let Some(seed) = seed {
        file.config.seed = seed;
    }
    let dir = output_root.join(&file.config.name);
    if dir.exists() && !force {
        return Err(one(format!("RunExists: {} already exists", dir.display())));
    }
    let options = SimulationOptions {
        dark_counts,
        ..Default::default()
    };
    let report = Simulation::new(&ws.topology, &ws.templates, &file.config, options)
        .and_then(Simulation::run)
        .map_err(|e| one(format!("{}: {e}", e.code())))?
        .report;
    let inputs = RunInputs {
        topology: export_topology(&ws.topology),
        templates: export_templates(&ws.templates),
        simulation: export_simulation(&file),
    };
    let dir = write_results(&report, output_root, &inputs, force).map_err(one)?;
    print!("{}", report_table(&report));
    println!("results written to {}", dir.display());
    Ok(())
}

fn report_table(report: &SimulationReport) -> String {
    let width = report.nodes.iter().map(|n| n.name.len()).max().unwrap_or(0).max(4);
    let mut out = format!(
        "{:<width$}  {:>18}  {:>12}  {:>16}\n",
        "node", "avg_wait_ps", "reservations", "pairs_per_s"
    );
    for n in &report.nodes {
        out += &format!(
            "{:<width$}  {:>18.1}  {:>12}  {:>16.4}\n",
            n.name, n.avg_wait_time_ps, n.reservations, n.throughput_pairs_per_s
        );
    }
    let t = &report.totals;
    out += &format!(
        "seed {}  requests {}/{}/{} (generated/granted/completed)  pairs {}\n",
        t.seed, t.requests_generated, t.requests_granted, t.requests_completed, t.pairs_completed
    );
    out
}

fn serve(
    bind: SocketAddr,
    output_root: PathBuf,
    max_runs: usize,
    static_dir: Option<PathBuf>,
    topology: Option<PathBuf>,
    templates: Option<PathBuf>,
) -> CliResult {
    let mut workspace = Workspace {
        templates: TemplateStore::default(),
        ..Default::default()
    };
    if let Some(templates) = &templates {
        workspace.templates = import_templates(&read_file(templates).map_err(one)?).map_err(one)?;
    }
    if let Some(topology) = &topology {
        let text = read_file(topology).map_err(one)?;
        workspace.topology = qnet::serialization::import_topology_with(&text, &workspace.templates).map_err(one)?;
    }
    let config = ServiceConfig {
        output_root,
        max_runs,
        static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(one)?;
    runtime
        .block_on(service::serve(bind, workspace, config))
        .map_err(|e| one(format!("serve: {e}")))
}
