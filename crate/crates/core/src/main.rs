use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blockswap::enumerate::{brute_force_enumerate, enumerate_all, member_lists, BRUTE_FORCE_CAP};
use blockswap::house::{build_house, parse_house, serialize_house, HouseParams, ModelHouse, ScoreTable};
use blockswap::ir::{parse_network, serialize_network, validate_network, MetricSelector, Network};
use blockswap::profile::{parse_profile, serialize_profile, synth_profile, DaccDistribution, Profile, SynthOptions};
use blockswap::rewrite::{apply_plan, render_dot};
use blockswap::search::{parse_plan, serialize_plan, write_trace, AnnealConfig, Evaluator};
use blockswap::synth::{chain, gen_network, gen_pool, NetSpec};
use blockswap::Rational;

#[derive(Parser)]
#[command(name = "blockswap", version, about = "Find and splice cheaper replacement blocks into a network graph")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate networks.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Check a network document; violations go to standard error.
    Validate { net: PathBuf },
    /// List the single-input/single-output sub-networks of a network.
    Enumerate {
        net: PathBuf,
        /// Use the exhaustive subset oracle instead of the traversal.
        #[arg(long)]
        brute_force: bool,
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model-house commands.
    #[command(subcommand)]
    House(HouseCmd),
    /// Profile commands.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Search for a replacement plan.
    Search(SearchArgs),
    /// Build the student network for a plan.
    Rewrite {
        #[arg(long)]
        house: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a Graphviz rendering with replaced layers coloured.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Render a network as Graphviz text.
    Render {
        net: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// A random DAG.
    Net {
        #[arg(long)]
        layers: usize,
        #[arg(long, default_value = "3/10")]
        edge_prob: Rational,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        palette: Vec<u32>,
        /// Topological positions that halve the spatial size.
        #[arg(long, value_delimiter = ',')]
        strides: Vec<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "net")]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A plain chain of conv layers.
    Chain {
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 8)]
        channels: u32,
        #[arg(long, default_value = "chain")]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel-scaled, deepened variants of a base network, one file each.
    Pool {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        variants: usize,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        scales: Vec<u32>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum HouseCmd {
    /// Sample teacher sub-networks and harvest alternatives.
    Build {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, num_args = 0..)]
        pool: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n_t: usize,
        #[arg(long, default_value_t = 200)]
        n_p: usize,
        #[arg(long, default_value_t = 200)]
        n_expand: usize,
        #[arg(long, default_value = "3/10")]
        r: Rational,
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        /// Per-channel scores keyed by alternative id.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Metrics from layer costs, synthetic accuracy losses.
    Synth {
        #[arg(long)]
        house: PathBuf,
        #[arg(long, default_value = "flops")]
        metric: MetricSelector,
        /// Defaults to the teacher's metric.
        #[arg(long)]
        requirement: Option<Rational>,
        #[arg(long, default_value = "1")]
        lambda: Rational,
        #[arg(long, default_value = "1/20")]
        dacc_max: Rational,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a supplied profile against a house and re-emit it canonically.
    Load {
        #[arg(long)]
        house: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    house: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// Overrides the profile's requirement.
    #[arg(long)]
    requirement: Option<Rational>,
    /// Overrides the profile's lambda.
    #[arg(long)]
    lambda: Option<Rational>,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value = "1")]
    t0: Rational,
    #[arg(long, default_value = "97/100")]
    cooling: Rational,
    #[arg(long, default_value_t = 50)]
    cooling_interval: usize,
    /// Overlapping draws a neighbor move may skip before stopping.
    #[arg(long, default_value_t = 0)]
    retry_draws: usize,
    /// Run restart chains concurrently.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    seed: u64,
    /// Only consider identity alternatives.
    #[arg(long)]
    teacher_only: bool,
    /// Emit a random feasible plan instead of searching.
    #[arg(long)]
    random_plan: bool,
    /// JSON-lines annealing trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_net(path: &Path) -> anyhow::Result<Network> {
    parse_network(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_house(path: &Path) -> anyhow::Result<ModelHouse> {
    parse_house(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_profile(path: &Path, house: &ModelHouse) -> anyhow::Result<Profile> {
    let p = parse_profile(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    p.check(house).with_context(|| format!("checking {}", path.display()))?;
    Ok(p)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => fs::write(p, bytes)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::Data),
        None => std::io::stdout()
            .write_all(bytes)
            .context("writing standard output")
            .map_err(Failure::Internal),
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.cmd {
        Command::Gen(g) => gen(g),
        Command::Validate { net } => {
            let net = load_net(&net)?;
            let report = validate_network(&net);
            if report.is_empty() {
                Ok(())
            } else {
                for v in &report {
                    eprintln!("{v}");
                }
                Err(Failure::Validation(format!("{} violation(s)", report.len())))
            }
        }
        Command::Enumerate {
            net,
            brute_force,
            min_size,
            out,
        } => {
            let net = load_net(&net)?;
            let subs = if brute_force {
                brute_force_enumerate(&net, BRUTE_FORCE_CAP).map_err(|e| Failure::Data(e.into()))?
            } else {
                enumerate_all(&net)
            };
            let lists: Vec<Vec<String>> = member_lists(&subs)
                .into_iter()
                .filter(|m| m.len() >= min_size)
                .collect();
            let mut bytes = serde_json::to_vec_pretty(&lists).map_err(|e| Failure::Internal(e.into()))?;
            bytes.push(b'\n');
            emit(out.as_deref(), &bytes)
        }
        Command::House(HouseCmd::Build {
            teacher,
            pool,
            n_t,
            n_p,
            n_expand,
            r,
            min_size,
            scores,
            seed,
            out,
        }) => {
            let teacher = load_net(&teacher)?;
            let pool: Vec<Network> = pool.iter().map(|p| load_net(p)).collect::<Result<_, _>>()?;
            let scores: Option<ScoreTable> = match scores {
                Some(p) => Some(
                    serde_json::from_slice(&read(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                ),
                None => None,
            };
            let params = HouseParams {
                n_t,
                n_p,
                n_expand,
                r,
                min_size,
                seed,
            };
            let house = build_house(&teacher, &pool, &params, scores.as_ref()).map_err(|e| Failure::Data(e.into()))?;
            emit(out.as_deref(), &serialize_house(&house))
        }
        Command::Profile(ProfileCmd::Synth {
            house,
            metric,
            requirement,
            lambda,
            dacc_max,
            seed,
            out,
        }) => {
            let house = load_house(&house)?;
            let opts = SynthOptions {
                metric,
                requirement,
                lambda,
                dacc: DaccDistribution {
                    max: dacc_max,
                    ..DaccDistribution::default()
                },
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let profile = synth_profile(&house, &opts, &mut rng).map_err(|e| Failure::Data(e.into()))?;
            profile.check(&house).map_err(|e| Failure::Data(e.into()))?;
            emit(out.as_deref(), &serialize_profile(&profile))
        }
        Command::Profile(ProfileCmd::Load { house, profile, out }) => {
            let house = load_house(&house)?;
            let profile = load_profile(&profile, &house)?;
            emit(out.as_deref(), &serialize_profile(&profile))
        }
        Command::Search(a) => search(a),
        Command::Rewrite { house, plan, out, dot } => {
            let house = load_house(&house)?;
            let doc = parse_plan(&read(&plan)?).with_context(|| format!("parsing {}", plan.display()))?;
            let ids: BTreeSet<String> = doc.plan.into_iter().collect();
            let student = apply_plan(&house, &ids).map_err(|e| Failure::Data(e.into()))?;
            if let Some(d) = dot {
                fs::write(&d, render_dot(&student.network, Some(&student.provenance)))
                    .with_context(|| format!("writing {}", d.display()))?;
            }
            emit(out.as_deref(), &serialize_network(&student.network))
        }
        Command::Render { net, out } => {
            let net = load_net(&net)?;
            emit(out.as_deref(), render_dot(&net, None).as_bytes())
        }
    }
}

fn gen(g: GenCmd) -> Outcome {
    match g {
        GenCmd::Net {
            layers,
            edge_prob,
            palette,
            strides,
            seed,
            name,
            out,
        } => {
            if layers == 0 {
                return Err(Failure::Data(anyhow!("--layers must be at least 1")));
            }
            if palette.is_empty() || palette.contains(&0) {
                return Err(Failure::Data(anyhow!("--palette needs positive widths")));
            }
            if edge_prob.is_negative() || edge_prob > Rational::one() {
                return Err(Failure::Data(anyhow!("--edge-prob must lie in [0, 1]")));
            }
            let spec = NetSpec {
                name,
                layers,
                edge_prob,
                channel_palette: palette,
                stride_positions: strides,
                seed,
            };
            emit(out.as_deref(), &serialize_network(&gen_network(&spec)))
        }
        GenCmd::Chain {
            length,
            channels,
            name,
            out,
        } => {
            if length == 0 || channels == 0 {
                return Err(Failure::Data(anyhow!("--length and --channels must be positive")));
            }
            emit(out.as_deref(), &serialize_network(&chain(&name, length, channels)))
        }
        GenCmd::Pool {
            base,
            variants,
            scales,
            seed,
            out_dir,
        } => {
            if scales.contains(&0) {
                return Err(Failure::Data(anyhow!("--scales must be positive")));
            }
            let base = load_net(&base)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for net in gen_pool(&base, variants, &scales, seed) {
                let path = out_dir.join(format!("{}.json", net.name()));
                fs::write(&path, serialize_network(&net)).with_context(|| format!("writing {}", path.display()))?;
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn search(a: SearchArgs) -> Outcome {
    let full = load_house(&a.house)?;
    let house = if a.teacher_only { full.teacher_only() } else { full };
    let mut profile = load_profile(&a.profile, &house)?;
    if let Some(r) = a.requirement {
        profile.requirement = r;
    }
    if let Some(l) = a.lambda {
        profile.lambda = l;
    }
    let ev = Evaluator::new(&house, &profile).map_err(|e| Failure::Data(e.into()))?;

    let (best, trace) = if a.random_plan {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (ev.random_plan(&mut rng), Vec::new())
    } else {
        let cfg = AnnealConfig {
            iterations: a.iters,
            initial_temperature: a.t0,
            cooling: a.cooling,
            cooling_interval: a.cooling_interval,
            restarts: a.restarts,
            seed: a.seed,
            retry_draws: a.retry_draws,
            parallel: a.parallel,
            record_trace: a.trace.is_some(),
        };
        let res = ev.anneal(&cfg).map_err(|e| Failure::Data(e.into()))?;
        (res.best, res.trace)
    };
    best.verify(&house, &profile)
        .map_err(|e| Failure::Internal(anyhow!("search produced a bad plan: {e}")))?;
    if let Some(path) = &a.trace {
        let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        write_trace(&trace, std::io::BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(a.out.as_deref(), &serialize_plan(&best))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(4)
        }
    }
}
