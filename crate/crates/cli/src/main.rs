use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phi_core::kv::KeyValues;
use phi_core::pipeline::{
    config_sidecar, evaluate, format_table, ordering_diagnostic, run_ablation, save_model, sweep_steps, train, Checkpoint,
    Model, ModelDims, Stage, TrainConfig,
};
use phi_core::synthdata::{generate_dataset, load_dataset, Dataset, SyntheticConfig};
use phi_core::{Error, Result};

/// Exit code for command-line usage errors, kept apart from the library's categories.
const USAGE_EXIT: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "phi", version, about = "Flow-refined action quality assessment on clip features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic train/test pair into a directory.
    GenData(GenArgs),
    /// Train a model and save its checkpoint plus config sidecar.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score the test split with a saved checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to check the checkpoint against. Defaults to the checkpoint's sidecar.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Load even if the checkpoint's fingerprint does not match the config.
        #[arg(long)]
        force: bool,
    },
    /// Train every ablation arm plus the step sweep and print the comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the full model once per flow step count.
    SweepSteps {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        steps_list: Vec<usize>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// D=1024, M=68 instead of the small default shapes.
    #[arg(long)]
    paper_dims: bool,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    sigma_c: Option<f64>,
    #[arg(long)]
    sigma_f: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Library defaults: B=32, 200 epochs per stage, d_k=128, d_t=32.
    Default,
    /// Desk-scale settings for D=64 features: B=8, 60 epochs, d_k=16, d_t=4.
    Ci,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// key=value file applied over the preset; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_k: Option<usize>,
    #[arg(long)]
    d_t: Option<usize>,
    #[arg(long)]
    no_gmf: bool,
    #[arg(long)]
    no_tesa: bool,
    #[arg(long)]
    no_lcr: bool,
    #[arg(long)]
    no_kl: bool,
    #[arg(long)]
    half: bool,
    #[arg(long)]
    freeze_tete: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match self.preset {
            Preset::Default => TrainConfig::default(),
            Preset::Ci => TrainConfig::ci(),
        };
        if let Some(path) = &self.config {
            cfg.apply(&read_kv(path, "train config")?)?;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.parse()?;
        }
        set(&mut cfg.batch, self.batch);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.steps, self.steps);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.d_k, self.d_k);
        set(&mut cfg.d_t, self.d_t);
        cfg.no_gmf |= self.no_gmf;
        cfg.no_tesa |= self.no_tesa;
        cfg.no_lcr |= self.no_lcr;
        cfg.no_kl |= self.no_kl;
        cfg.half |= self.half;
        cfg.freeze_tete |= self.freeze_tete;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_kv(path: &Path, what: &'static str) -> Result<KeyValues> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    KeyValues::parse(&text, what)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_split(dir: &Path, split: &str) -> Result<Dataset> {
    load_dataset(&dir.join(format!("{split}.phif")))
}

fn gen_data(a: &GenArgs) -> Result<()> {
    let mut cfg = if a.paper_dims {
        SyntheticConfig::paper_dims()
    } else {
        SyntheticConfig::default()
    };
    set(&mut cfg.n_train, a.n_train);
    set(&mut cfg.n_test, a.n_test);
    set(&mut cfg.m, a.m);
    set(&mut cfg.d, a.d);
    set(&mut cfg.d_s, a.d_s);
    set(&mut cfg.sigma_c, a.sigma_c);
    set(&mut cfg.sigma_f, a.sigma_f);
    set(&mut cfg.sigma_y, a.sigma_y);
    set(&mut cfg.n_scenes, a.n_scenes);
    set(&mut cfg.seed, a.seed);
    let (train, test) = generate_dataset(&cfg, &a.out)?;
    println!("train={}", train.display());
    println!("test={}", test.display());
    Ok(())
}

fn run_train(data: &Path, out: &Path, args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let train_set = load_split(data, "train")?;
    let outcome = train(&train_set, &cfg)?;
    save_model(&outcome.model, &cfg, out)?;
    if let Some(last) = outcome.history.last() {
        println!("stage={}", last.stage.as_str());
        println!("final_loss_s={:.6}", last.loss_s);
        println!("final_total={:.6}", last.total);
    }
    println!("checkpoint={}", out.display());
    println!("config={}", config_sidecar(out).display());
    Ok(())
}

fn run_eval(data: &Path, ckpt_path: &Path, config: Option<&Path>, force: bool) -> Result<()> {
    let test = load_split(data, "test")?;
    let side = config_sidecar(ckpt_path);
    let cfg_path = config.map(Path::to_path_buf).or_else(|| side.exists().then_some(side));
    let expected = match &cfg_path {
        Some(p) => {
            let cfg = TrainConfig::from_text(&fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?)?;
            Some(ModelDims::new(&cfg, test.manifest.d, test.manifest.m).fingerprint())
        }
        None => None,
    };
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = Model::from_checkpoint(&ckpt, expected, force)?;
    model.reset_tete_calls();
    let report = evaluate(&model, &test)?;
    print!("{}", report.to_key_values());
    println!("stage={}", model.stage.as_str());
    println!("tete_calls={}", model.tete_calls());
    if model.stage == Stage::Stage2 {
        println!("ordering={:.6}", ordering_diagnostic(&model, &test, 32)?);
    }
    Ok(())
}

fn emit_table(text: &str, path: Option<&Path>) -> Result<()> {
    print!("{text}");
    match path {
        Some(p) => write_file(p, text),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train { data, out, train } => run_train(&data, &out, &train),
        Command::Eval {
            data,
            checkpoint,
            config,
            force,
        } => run_eval(&data, &checkpoint, config.as_deref(), force),
        Command::Ablate { data, table, train } => {
            let cfg = train.resolve()?;
            let rows = run_ablation(&cfg, &load_split(&data, "train")?, &load_split(&data, "test")?)?;
            emit_table(&format_table(&rows), table.as_deref())
        }
        Command::SweepSteps {
            data,
            steps_list,
            table,
            train,
        } => {
            let cfg = train.resolve()?;
            if steps_list.is_empty() || steps_list.contains(&0) {
                return Err(Error::Config("step counts must be positive".into()));
            }
            let rows = sweep_steps(&cfg, &steps_list, &load_split(&data, "train")?, &load_split(&data, "test")?, None)?;
            emit_table(&format_table(&rows), table.as_deref())
        }
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| writeln!(buf, "level={} {}", rec.level().as_str().to_lowercase(), rec.args()))
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE_EXIT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("error=\"{e}\" code={}", e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
