use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use mpflow::alloc::{allocate, split_rates};
use mpflow::circle::{self, CircleParams};
use mpflow::cuts::{gcc_feasible, maxflow_feasible, LoadVector};
use mpflow::dynamics::{simulate, streaming_blocking, Model, SimConfig, TrafficSpec};
use mpflow::equilibrium::{
    crp_check_integrated, crp_check_peak, integrated_equilibrium, peak_rate_equilibrium,
};
use mpflow::network::parse_network;
use mpflow::oracle::{solve_num, UtilitySpec};
use mpflow::rational::{format_rational, parse_rational, to_f64};
use mpflow::{Error, Network, Population};

/// Multipath flow-level analysis of single-hop networks.
///
/// Networks are JSON documents
/// `{"resources": [{"id", "capacity"}], "users": [{"id", "resources", "n", "m"}]}`
/// with capacities as numbers or `"p/q"` strings. Traffic files hold
/// `{"users": [{"id", "lambda", "mu", "kappa", "eta", "peak"}]}`.
///
/// Exit status: 0 on success, 2 on malformed input, 3 when the model rejects
/// the input (instability, non-unique equilibrium, size caps, no
/// convergence), 1 on internal failures. Errors are written to standard
/// error as `{"error": kind, "message": ...}`.
#[derive(Parser)]
#[command(name = "mpflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Emit the command's CSV table instead of JSON.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster decomposition and split rates for the counts in the network
    /// file (`n + m` per user). CSV columns: user,rate,level.
    Allocate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Checks a per-user load vector `{"user": load}` against every
    /// generalized cut constraint and by max-flow. CSV columns:
    /// resources,status.
    VerifyCuts {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        loads: PathBuf,
    },
    /// Solves the alpha-fair allocation numerically. CSV columns: user,rate.
    OracleSolve {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Stochastic flow-level simulation. CSV columns:
    /// user,n_mean,n_half_width,m_mean,m_half_width,throughput_mean,blocking_mean.
    Simulate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        traffic: PathBuf,
        /// streaming, integrated or peak_rate.
        #[arg(long)]
        model: Model,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, visible_alias = "reps", default_value_t = 1)]
        replications: usize,
        /// Refuse streaming arrivals that would push the smallest rate below this.
        #[arg(long)]
        admission: Option<f64>,
        #[arg(long)]
        record_every: Option<f64>,
    },
    /// Fluid-limit equilibrium and pooling check. CSV columns:
    /// user,n_hat,m_hat,x_hat,peak_constrained.
    Equilibrium {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        traffic: PathBuf,
        /// integrated or peak_rate.
        #[arg(long)]
        model: Model,
    },
    /// Exact streaming blocking probabilities under threshold admission.
    /// CSV columns: user,probability.
    Blocking {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        traffic: PathBuf,
        /// Smallest admissible rate, e.g. `1` or `1/2`.
        #[arg(long)]
        y: String,
    },
    /// Symmetric circle analytics. CSV columns: k,z,log_probability,probability.
    Circle {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        r: usize,
        #[arg(long = "C", default_value = "1")]
        capacity: String,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value = "1")]
        mu: String,
        #[arg(long, default_value = "1")]
        kappa: String,
        #[arg(long, default_value = "1")]
        eta: String,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
    },
}

struct Output {
    json: Value,
    table: Vec<Vec<String>>,
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_network(path: &Path) -> Result<(Network, Population), Error> {
    parse_network(&read(path)?)
}

fn per_user(net: &Network, values: impl IntoIterator<Item = Value>) -> Value {
    net.users()
        .iter()
        .zip(values)
        .map(|(u, v)| (u.id.clone(), v))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn run(command: Command) -> Result<Output, Error> {
    match command {
        Command::Allocate { network } => {
            let (net, pop) = load_network(&network)?;
            let counts = pop.totals();
            let dec = allocate(&net, &counts)?;
            let splits = split_rates(&net, &counts, &dec)?;
            let mut json = dec.to_json(&net);
            json["splits"] = splits.to_json(&net);
            let table = net
                .users()
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    vec![
                        u.id.clone(),
                        format_rational(&dec.rates[i]),
                        dec.level_of(i).map_or(String::new(), |k| (k + 1).to_string()),
                    ]
                })
                .collect();
            Ok(Output { json, table })
        }
        Command::VerifyCuts { network, loads } => {
            let (net, _) = load_network(&network)?;
            let loads = LoadVector::from_json(&net, &read(&loads)?)?;
            let report = gcc_feasible(&net, &loads)?;
            let flow = maxflow_feasible(&net, &loads)?;
            if flow != report.feasible {
                return Err(Error::Internal("cut check and max-flow disagree".into()));
            }
            let mut json = report.to_json(&net);
            json["maxflow_feasible"] = flow.into();
            let row = |s, status: &str| vec![net.resource_ids(s).join(" "), status.to_string()];
            let table = report
                .violated
                .iter()
                .map(|s| row(s, "violated"))
                .chain(report.tight.iter().map(|s| row(s, "tight")))
                .collect();
            Ok(Output { json, table })
        }
        Command::OracleSolve { network, alpha, tol } => {
            let (net, pop) = load_network(&network)?;
            let counts: Vec<f64> = pop.totals().iter().map(to_f64).collect();
            let sol = solve_num(&net, &counts, UtilitySpec::new(alpha)?, tol)?;
            let splits = sol.splits.iter().map(|row| {
                row.iter()
                    .map(|(&j, &v)| (net.resource(j).id.clone(), Value::from(v)))
                    .collect::<serde_json::Map<_, _>>()
                    .into()
            });
            let json = json!({
                "rates": per_user(&net, sol.rates.iter().map(|&x| x.into())),
                "splits": per_user(&net, splits),
                "duals": net.resources().iter().zip(&sol.duals)
                    .map(|(r, &d)| (r.id.clone(), Value::from(d)))
                    .collect::<serde_json::Map<_, _>>(),
                "objective": sol.objective(&counts, UtilitySpec::new(alpha)?),
                "gap": sol.gap,
                "newton_steps": sol.newton_steps,
            });
            let table = net
                .users()
                .iter()
                .zip(&sol.rates)
                .map(|(u, x)| vec![u.id.clone(), x.to_string()])
                .collect();
            Ok(Output { json, table })
        }
        Command::Simulate {
            network,
            traffic,
            model,
            scale,
            horizon,
            warmup,
            seed,
            replications,
            admission,
            record_every,
        } => {
            let (net, _) = load_network(&network)?;
            let traffic = TrafficSpec::from_json(&net, &read(&traffic)?)?;
            let cfg = SimConfig {
                model,
                scale,
                horizon,
                warmup,
                seed,
                replications,
                admission,
                record_every,
            };
            let res = simulate(&net, &traffic, &cfg)?;
            let mut json = serde_json::to_value(&res).expect("result serializes");
            json["users"] = net.users().iter().map(|u| u.id.clone()).collect::<Vec<_>>().into();
            json["config"] = serde_json::to_value(&cfg).expect("config serializes");
            let table = net
                .users()
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    vec![
                        u.id.clone(),
                        res.n[i].mean.to_string(),
                        res.n[i].half_width.to_string(),
                        res.m[i].mean.to_string(),
                        res.m[i].half_width.to_string(),
                        res.throughput[i].mean.to_string(),
                        res.blocking[i].mean.to_string(),
                    ]
                })
                .collect();
            Ok(Output { json, table })
        }
        Command::Equilibrium { network, traffic, model } => {
            let (net, _) = load_network(&network)?;
            let traffic = TrafficSpec::from_json(&net, &read(&traffic)?)?;
            let (eq, crp) = match model {
                Model::Integrated => (
                    integrated_equilibrium(&net, &traffic)?,
                    crp_check_integrated(&net, &traffic)?,
                ),
                Model::PeakRate => (
                    peak_rate_equilibrium(&net, &traffic)?,
                    crp_check_peak(&net, &traffic)?,
                ),
                Model::Streaming => {
                    return Err(Error::Input(
                        "equilibrium needs --model integrated or peak_rate".into(),
                    ))
                }
            };
            let mut json = eq.to_json(&net);
            let sets = |v: &[mpflow::ResourceSet]| -> Vec<Vec<String>> {
                v.iter().map(|s| net.resource_ids(s)).collect()
            };
            json["crp"] = json!({
                "pooled": crp.pooled,
                "failing": sets(&crp.failing),
                "boundary": sets(&crp.boundary),
            });
            let table = net
                .users()
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    vec![
                        u.id.clone(),
                        format_rational(&eq.n_hat[i]),
                        format_rational(&eq.m_hat[i]),
                        format_rational(&eq.x_hat[i]),
                        eq.peak_constrained.contains(i).to_string(),
                    ]
                })
                .collect();
            Ok(Output { json, table })
        }
        Command::Blocking { network, traffic, y } => {
            let (net, _) = load_network(&network)?;
            let traffic = TrafficSpec::from_json(&net, &read(&traffic)?)?;
            let b = streaming_blocking(&net, &traffic, &parse_rational(&y)?, None)?;
            let json = json!({
                "probability": per_user(&net, b.probability.iter().map(|p| format_rational(p).into())),
                "probability_f64": per_user(&net, b.probability.iter().map(|p| to_f64(p).into())),
                "states": b.states,
                "bounds": per_user(&net, b.bounds.iter().map(|&m| m.into())),
            });
            let table = net
                .users()
                .iter()
                .zip(&b.probability)
                .map(|(u, p)| vec![u.id.clone(), format_rational(p)])
                .collect();
            Ok(Output { json, table })
        }
        Command::Circle {
            n,
            r,
            capacity,
            lambda,
            mu,
            kappa,
            eta,
            eps,
        } => {
            let p = CircleParams::new(
                n,
                r,
                parse_rational(&capacity)?,
                parse_rational(&lambda)?,
                parse_rational(&mu)?,
                parse_rational(&kappa)?,
                parse_rational(&eta)?,
            )?;
            let eq = circle::circle_equilibrium(&p)?;
            let cov = circle::covariance_closed(&p)?;
            let rows = circle::congestion_probabilities(&p, eps)?;
            let size = circle::most_likely_cluster_size(&p, eps)?;
            let json = json!({
                "equilibrium": eq,
                "covariances": cov,
                "congestion": rows,
                "k_argmax": size.k_argmax,
                "k0": size.k0,
            });
            let table = rows
                .iter()
                .map(|row| {
                    vec![
                        row.k.to_string(),
                        row.z.to_string(),
                        row.log_probability.to_string(),
                        row.probability.to_string(),
                    ]
                })
                .collect();
            Ok(Output { json, table })
        }
    }
}

fn header(command: &Command) -> &'static [&'static str] {
    match command {
        Command::Allocate { .. } => &["user", "rate", "level"],
        Command::VerifyCuts { .. } => &["resources", "status"],
        Command::OracleSolve { .. } => &["user", "rate"],
        Command::Simulate { .. } => &[
            "user",
            "n_mean",
            "n_half_width",
            "m_mean",
            "m_half_width",
            "throughput_mean",
            "blocking_mean",
        ],
        Command::Equilibrium { .. } => &["user", "n_hat", "m_hat", "x_hat", "peak_constrained"],
        Command::Blocking { .. } => &["user", "probability"],
        Command::Circle { .. } => &["k", "z", "log_probability", "probability"],
    }
}

fn render(out: &Output, head: &[&str], csv: bool) -> Vec<u8> {
    if csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(head).expect("in-memory write");
        for row in &out.table {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    } else {
        let mut bytes = serde_json::to_vec_pretty(&out.json).expect("json serializes");
        bytes.push(b'\n');
        bytes
    }
}

fn error_json(e: &Error) -> Value {
    let mut v = json!({ "error": e.kind(), "message": e.to_string() });
    match e {
        Error::NonUnique { users, resources } => {
            v["users"] = users.clone().into();
            v["resources"] = resources.clone().into();
        }
        Error::Unstable { violated } => v["violated"] = violated.clone().into(),
        _ => {}
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let head = header(&cli.command);
    let result = run(cli.command).and_then(|out| {
        let bytes = render(&out, head, cli.csv);
        match &cli.output {
            Some(path) => fs::write(path, bytes)
                .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display()))),
            None => std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| Error::Input(format!("cannot write output: {e}"))),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(match &e {
                Error::Internal(_) => 1,
                e if e.is_domain() => 3,
                _ => 2,
            })
        }
    }
}
