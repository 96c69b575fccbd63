//! `diffnet` command-line entry point.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffnet_core::eval::{
    evaluate, majority_vote, run_ablation, run_quantitative, run_single, AblationId, EvalReport,
    Experiment,
};
use diffnet_core::model::{
    encode_dataset, DiffNet, ExternalFeatures, ModelConfig, ModelParams, ParamId,
};
use diffnet_core::tensor::{finite_diff_check, Rng, Tensor, TensorError};
use diffnet_core::text::{
    compute_features, generate_synthetic, load_dataset, load_embeddings, porter_stem, save_dataset,
    tokenize, EmbeddingMatrix, Label, StoryInstance, Vocabulary,
};
use diffnet_core::train::{load_checkpoint, save_checkpoint, train_with, write_log, TrainConfig};

use settings::Knobs;

#[derive(Parser)]
#[command(
    name = "diffnet",
    version,
    about = "Story-ending prediction with difference-aware attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with a planted cue
    GenData,
    /// Train a model and write its checkpoint and log
    Train,
    /// Score a dataset with a checkpoint
    Eval,
    /// Train and evaluate ablated configurations over several seeds
    Ablate,
    /// Retrain on perturbed stories to measure sentence importance
    Analyze,
    /// Train several seeds and combine them by majority vote
    Ensemble,
    /// Compare analytic and numerical gradients on a tiny model
    Gradcheck,
    /// Print the Porter stem of each word
    Stem { words: Vec<String> },
    /// Print the binary match features of both endings
    Features {
        #[arg(long)]
        story: String,
        #[arg(long)]
        ending1: String,
        #[arg(long)]
        ending2: String,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    pub fn data(msg: impl std::fmt::Display) -> Self {
        Failure::Data(msg.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Data(m) | Failure::Check(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let knobs = cli.knobs.with_file()?;
    match cli.command {
        Command::GenData => gen_data(&knobs),
        Command::Train => train_cmd(&knobs),
        Command::Eval => eval_cmd(&knobs),
        Command::Ablate => ablate(&knobs),
        Command::Analyze => analyze(&knobs),
        Command::Ensemble => ensemble(&knobs),
        Command::Gradcheck => gradcheck(&knobs),
        Command::Stem { words } => stem(&words),
        Command::Features {
            story,
            ending1,
            ending2,
        } => features(&story, &ending1, &ending2),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| at(path, e))
}

fn out_dir(knobs: &Knobs) -> Result<PathBuf, Failure> {
    let dir = knobs.out_dir();
    fs::create_dir_all(&dir).map_err(|e| at(&dir, e))?;
    Ok(dir)
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::Usage(format!("{flag} is required")))
}

/// Data error naming `path`, unless the message already starts with it.
fn at(path: &Path, e: impl std::fmt::Display) -> Failure {
    let msg = e.to_string();
    if msg.starts_with(&path.display().to_string()) {
        Failure::Data(msg)
    } else {
        Failure::Data(format!("{}: {msg}", path.display()))
    }
}

fn load(path: &Path) -> Result<Vec<StoryInstance>, Failure> {
    let data = load_dataset(path).map_err(|e| at(path, e))?;
    if data.is_empty() {
        return Err(Failure::data(format!("{}: no instances", path.display())));
    }
    Ok(data)
}

/// Width of the first record in an external feature file.
fn sniff_external_dim(path: &Path) -> Result<usize, Failure> {
    let text = fs::read_to_string(path).map_err(|e| at(path, e))?;
    let line = text.lines().find(|l| !l.trim().is_empty());
    let line = line.ok_or_else(|| Failure::data(format!("{}: empty file", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| at(path, e))?;
    value["features"].as_array().map(Vec::len).ok_or_else(|| {
        Failure::data(format!(
            "{}: first record has no features array",
            path.display()
        ))
    })
}

/// Model config with the external feature width settled, plus the loaded
/// external features if any.
fn model_and_external(knobs: &Knobs) -> Result<(ModelConfig, Option<ExternalFeatures>), Failure> {
    let mut config = knobs.model_config()?;
    let Some(path) = &knobs.external_features else {
        if config.external_feature_dim > 0 {
            return Err(Failure::Usage(
                "--external-feature-dim needs --external-features".into(),
            ));
        }
        return Ok((config, None));
    };
    if config.external_feature_dim == 0 {
        config.external_feature_dim = sniff_external_dim(path)?;
    }
    let ext = ExternalFeatures::load(path, config.external_feature_dim).map_err(|e| at(path, e))?;
    Ok((config, Some(ext)))
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Failure::data)?;
    write_file(path, text.as_bytes())
}

fn gen_data(knobs: &Knobs) -> Outcome {
    let dir = out_dir(knobs)?;
    let (n, eval_n) = (knobs.n.unwrap_or(2000), knobs.eval_n.unwrap_or(0));
    let cue_prob = knobs.cue_prob.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&cue_prob) || n == 0 {
        return Err(Failure::Usage(
            "--cue-prob must lie in [0, 1] and --n must be positive".into(),
        ));
    }
    let resolved = Knobs {
        n: Some(n),
        eval_n: Some(eval_n),
        cue_prob: Some(cue_prob),
        seed: Some(knobs.seed()),
        out: Some(dir.clone()),
        ..knobs.clone()
    };
    resolved.echo(&dir)?;
    let mut data = generate_synthetic(n + eval_n, knobs.seed(), cue_prob);
    let save = |name: &str, part: &[StoryInstance]| -> Outcome {
        let path = dir.join(name);
        save_dataset(&path, part).map_err(Failure::data)?;
        println!("wrote {} stories to {}", part.len(), path.display());
        Ok(())
    };
    if eval_n > 0 {
        let eval = data.split_off(n);
        save("train.jsonl", &data)?;
        save("eval.jsonl", &eval)
    } else {
        save("dataset.jsonl", &data)
    }
}

fn train_cmd(knobs: &Knobs) -> Outcome {
    let (config, external) = model_and_external(knobs)?;
    let train_cfg = knobs.train_config()?;
    let train_data = load(require(&knobs.dataset, "--dataset")?)?;
    let eval_data = knobs.eval_dataset.as_deref().map(load).transpose()?;
    let dir = out_dir(knobs)?;
    knobs.resolved(&config, &train_cfg).echo(&dir)?;

    let all: Vec<StoryInstance> = train_data
        .iter()
        .chain(eval_data.iter().flatten())
        .cloned()
        .collect();
    let vocab = Vocabulary::build(&all);
    let mut rng = Rng::new(train_cfg.seed);
    let embedding = match &knobs.embeddings {
        Some(path) => {
            load_embeddings(path, &vocab, config.embed_dim, &mut rng).map_err(|e| at(path, e))?
        }
        None => EmbeddingMatrix::random(&vocab, config.embed_dim, &mut rng),
    };
    let mut model = DiffNet::new(config, vocab, &embedding, &mut rng)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let train_enc =
        encode_dataset(&train_data, &model.vocab, external.as_ref()).map_err(Failure::data)?;
    let eval_enc = eval_data
        .as_deref()
        .map(|d| encode_dataset(d, &model.vocab, external.as_ref()))
        .transpose()
        .map_err(Failure::data)?;

    println!(
        "{} training stories, vocabulary {}, {} parameters",
        train_enc.len(),
        model.vocab.len(),
        model.params.count()
    );
    let outcome = train_with(
        &mut model,
        &train_enc,
        eval_enc.as_deref(),
        &train_cfg,
        &mut |line| {
            let eval = line
                .eval_acc
                .map_or(String::new(), |a| format!("  eval acc {:.4}", a));
            println!(
                "epoch {:>3}  lr {:.6}  loss {:.4}  train acc {:.4}{eval}",
                line.epoch + 1,
                line.lr,
                line.loss,
                line.train_acc
            );
        },
    )
    .map_err(|e| Failure::data(e.to_string()))?;

    let mut epoch = train_cfg.epochs as u32;
    if let Some(best) = &outcome.best {
        model.params = best.params.clone();
        epoch = best.epoch as u32 + 1;
        println!(
            "best epoch {} with eval accuracy {:.4}",
            epoch, best.snapshot.accuracy
        );
    }
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&ckpt, &model, train_cfg.seed, epoch)
        .map_err(|e| Failure::data(e.to_string()))?;
    write_log(&dir.join("train_log.jsonl"), &outcome.epochs)
        .map_err(|e| Failure::data(e.to_string()))?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn eval_cmd(knobs: &Knobs) -> Outcome {
    let ckpt = require(&knobs.checkpoint, "--checkpoint")?;
    let data = load(require(&knobs.dataset, "--dataset")?)?;
    let ck = load_checkpoint(ckpt, None).map_err(|e| at(ckpt, e))?;
    let external = match &knobs.external_features {
        Some(path) => Some(
            ExternalFeatures::load(path, ck.model.config.external_feature_dim)
                .map_err(|e| at(path, e))?,
        ),
        None => None,
    };
    let dir = out_dir(knobs)?;
    let train_cfg = TrainConfig {
        seed: ck.seed,
        ..knobs.train_config()?
    };
    knobs.resolved(&ck.model.config, &train_cfg).echo(&dir)?;
    let enc = encode_dataset(&data, &ck.model.vocab, external.as_ref()).map_err(Failure::data)?;
    let mut report = evaluate(&ck.model, &enc).map_err(Failure::data)?;
    report.seed = Some(ck.seed);
    report
        .save(&dir.join("report.json"), Some(&dir.join("predictions.csv")))
        .map_err(Failure::data)?;
    print_report("accuracy", &report);
    Ok(())
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label} {:.4} ({}/{}), ties {}, mean ending cosine {:.4}",
        r.accuracy, r.correct, r.n, r.ties, r.mean_cosine
    );
}

struct GridInputs {
    config: ModelConfig,
    train_cfg: TrainConfig,
    external: Option<ExternalFeatures>,
    train_data: Vec<StoryInstance>,
    eval_data: Vec<StoryInstance>,
    dir: PathBuf,
    jobs: usize,
}

fn grid_inputs(knobs: &Knobs) -> Result<GridInputs, Failure> {
    let (config, external) = model_and_external(knobs)?;
    let train_cfg = knobs.train_config()?;
    let train_data = load(require(&knobs.dataset, "--dataset")?)?;
    let eval_data = load(require(&knobs.eval_dataset, "--eval-dataset")?)?;
    let dir = out_dir(knobs)?;
    let jobs = knobs.jobs.unwrap_or(1);
    let resolved = Knobs {
        seeds: knobs.seed_list(),
        jobs: Some(jobs),
        ..knobs.resolved(&config, &train_cfg)
    };
    resolved.echo(&dir)?;
    Ok(GridInputs {
        config,
        train_cfg,
        external,
        train_data,
        eval_data,
        dir,
        jobs,
    })
}

impl GridInputs {
    fn experiment<'a>(&'a self, knobs: &'a Knobs) -> Experiment<'a> {
        Experiment {
            model: &self.config,
            train: &self.train_cfg,
            train_data: &self.train_data,
            eval_data: &self.eval_data,
            embeddings: knobs.embeddings.as_deref(),
            external: self.external.as_ref(),
        }
    }
}

fn ablate(knobs: &Knobs) -> Outcome {
    let ids: Vec<AblationId> = if knobs.ablation.is_empty() {
        AblationId::ALL.to_vec()
    } else {
        knobs
            .ablation
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|e: diffnet_core::eval::EvalError| Failure::Usage(e.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    let inputs = grid_inputs(knobs)?;
    let table = run_ablation(
        &inputs.experiment(knobs),
        &ids,
        &knobs.seed_list(),
        inputs.jobs,
    )
    .map_err(Failure::data)?;
    let text = table.to_text();
    save_json(&inputs.dir.join("ablation.json"), &table)?;
    write_file(&inputs.dir.join("ablation.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn analyze(knobs: &Knobs) -> Outcome {
    let modes = knobs.modes()?;
    let inputs = grid_inputs(knobs)?;
    let table = run_quantitative(
        &inputs.experiment(knobs),
        &modes,
        &knobs.seed_list(),
        inputs.jobs,
    )
    .map_err(Failure::data)?;
    let text = table.to_text();
    save_json(&inputs.dir.join("analysis.json"), &table)?;
    write_file(&inputs.dir.join("analysis.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn ensemble(knobs: &Knobs) -> Outcome {
    let members = knobs
        .members
        .ok_or_else(|| Failure::Usage("--members is required".into()))?;
    if members == 0 {
        return Err(Failure::Usage("--members must be at least 1".into()));
    }
    let knobs = &Knobs {
        seeds: Vec::new(),
        runs: Some(members),
        ..knobs.clone()
    };
    let inputs = grid_inputs(knobs)?;
    let exp = inputs.experiment(knobs);
    let mut reports = Vec::with_capacity(members);
    for seed in knobs.seed_list() {
        let run = run_single(&exp, exp.model, exp.train_data, exp.eval_data, seed)
            .map_err(Failure::data)?;
        print_report(&format!("seed {seed}: accuracy"), &run.report);
        run.report
            .save(&inputs.dir.join(format!("member-{seed}.json")), None)
            .map_err(Failure::data)?;
        reports.push(run.report);
    }
    let vote = majority_vote(&reports).map_err(Failure::data)?;
    vote.save(
        &inputs.dir.join("ensemble.json"),
        Some(&inputs.dir.join("ensemble.csv")),
    )
    .map_err(Failure::data)?;
    print_report(&format!("ensemble of {members}: accuracy"), &vote);
    Ok(())
}

const GRADCHECK_VOCAB: usize = 20;
const GRADCHECK_TOLERANCE: f64 = 1e-6;

fn gradcheck(knobs: &Knobs) -> Outcome {
    let base = knobs.model_config()?;
    let config = ModelConfig {
        embed_dim: 8,
        hidden: 4,
        enriched: 4,
        dropout: 0.0,
        external_feature_dim: 0,
        ..base
    };
    let seed = knobs.seed();
    let vocab = Vocabulary::from_tokens((0..GRADCHECK_VOCAB - 2).map(|i| format!("w{i}")));
    let mut rng = Rng::new(seed);
    let mut net =
        DiffNet::random(config, vocab, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
    for (id, t) in net.params.iter_mut() {
        if id != ParamId::Embedding {
            for x in t.data_mut() {
                *x += rng.uniform(-0.3, 0.3);
            }
        }
    }
    let tokens = |rng: &mut Rng, n: usize| -> Vec<String> {
        (0..n)
            .map(|_| format!("w{}", rng.below(GRADCHECK_VOCAB - 2)))
            .collect()
    };
    let stories: Vec<StoryInstance> = (0..2)
        .map(|i| StoryInstance {
            id: format!("g{i}"),
            sentences: vec![tokens(&mut rng, 6)],
            ending1: tokens(&mut rng, 3),
            ending2: tokens(&mut rng, 3),
            label: if i == 0 { Label::First } else { Label::Second },
        })
        .collect();
    let batch = encode_dataset(&stories, &net.vocab, None).map_err(Failure::data)?;
    let refs: Vec<_> = batch.iter().collect();
    let objective = |ps: &[Tensor]| {
        let candidate = DiffNet {
            config: net.config.clone(),
            vocab: net.vocab.clone(),
            params: ModelParams::from_vec(ps.to_vec()),
        };
        let out = candidate
            .batch_gradient(&refs, None)
            .map_err(|e| TensorError::Invalid {
                op: "objective",
                reason: e.to_string(),
            })?;
        Ok((out.loss.total, out.grads.into_vec()))
    };
    let params = net.params.clone().into_vec();
    let report =
        finite_diff_check(objective, &params, 1e-5).map_err(|e| Failure::Check(e.to_string()))?;
    let err = report.max_rel_error;
    println!(
        "max relative error {err:.3e} over {} parameters",
        net.params.count()
    );
    if err < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient error {err:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn stem(words: &[String]) -> Outcome {
    if words.is_empty() {
        return Err(Failure::Usage("stem needs at least one word".into()));
    }
    for w in words {
        println!("{w}\t{}", porter_stem(&w.to_lowercase()));
    }
    Ok(())
}

fn features(story: &str, ending1: &str, ending2: &str) -> Outcome {
    let (story, e1, e2) = (tokenize(story), tokenize(ending1), tokenize(ending2));
    for (name, this, other) in [("ending 1", &e1, &e2), ("ending 2", &e2, &e1)] {
        println!("{name}");
        println!("  token\tee\tes\tes-fuzzy");
        let ann = compute_features(this, other, &story);
        for (tok, f) in this.iter().zip(&ann.0) {
            let bit = |b: bool| u8::from(b);
            println!(
                "  {tok}\t{}\t{}\t{}",
                bit(f.end_end),
                bit(f.end_story),
                bit(f.end_story_fuzzy)
            );
        }
    }
    Ok(())
}
