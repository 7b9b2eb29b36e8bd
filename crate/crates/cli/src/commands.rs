use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Parser;

use geoattn::autodiff::sigmoid;
use geoattn::data::{
    generate_dataset, load_manifest, read_patch, save_ply, write_dataset, DatasetSpec, Split, SPLIT_FILE,
};
use geoattn::network::{forward, read_checkpoint, write_checkpoint, Arch, ModelConfig};
use geoattn::par::Execution;
use geoattn::training::{evaluate, train, EvalOptions, MetricsReport, TrainConfig};

use crate::manifest::{beside, RunManifest};
use crate::{Cli, CliError, CliResult, Command, EvalArgs, GenerateArgs, InspectArgs, RerunArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.gack";
pub const LAST_CHECKPOINT_FILE: &str = "last.gack";
pub const LOG_FILE: &str = "log.csv";

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn flag(argv: &mut Vec<String>, name: &str, value: impl ToString) {
    argv.push(format!("--{name}"));
    argv.push(value.to_string());
}

fn switch(argv: &mut Vec<String>, name: &str, on: bool) {
    if on {
        argv.push(format!("--{name}"));
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} not found", path.display())))
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Inspect(a) => inspect(&a),
        Command::Rerun(a) => rerun(&a),
    }
}

impl GenerateArgs {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            shapes: self.shapes.clone(),
            count: self.count,
            n_points: self.points,
            spacing: self.spacing,
            seed: self.seed,
            random_orientation: !self.canonical,
        }
    }

    fn argv(&self) -> Vec<String> {
        let mut v = vec!["generate".to_string()];
        flag(&mut v, "shapes", self.shapes.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
        flag(&mut v, "count", self.count);
        flag(&mut v, "points", self.points);
        flag(&mut v, "spacing", self.spacing);
        flag(&mut v, "seed", self.seed);
        flag(&mut v, "out", path_str(&self.out));
        switch(&mut v, "canonical", self.canonical);
        switch(&mut v, "sequential", self.sequential);
        v
    }
}

fn generate(a: &GenerateArgs) -> CliResult<()> {
    let spec = a.spec();
    if a.count < 6 {
        return Err(CliError::usage(format!("--count {} is below the 6 patches a 4:1:1 split needs", a.count)));
    }
    let mut m = RunManifest::new("generate", a.argv(), serde_json::to_value(&spec).map_err(anyhow::Error::from)?)
        .seed("data", a.seed)
        .seed("split", a.seed);
    m.outputs = vec![a.out.clone()];
    m.write(&a.out.join(MANIFEST_FILE))?;
    let patches = generate_dataset(&spec, execution(a.sequential))?;
    let split = write_dataset(&a.out, &patches, a.seed)?;
    println!(
        "wrote {} patches to {} (train {}, val {}, test {})",
        patches.len(),
        a.out.display(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

impl TrainArgs {
    fn model(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            k: self.k,
            widths: self.widths.clone(),
            semantic_width: self.semantic_width,
            global_width: self.global_width,
            head_widths: self.head_widths.clone(),
            task: self.task,
            leaky_slope: self.leaky_slope,
            seed: self.model_seed,
            ga_weighted_aggregation: self.ga_weighted,
        }
    }

    fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            mse_weight: self.mse_weight,
            seed: self.seed,
            augment: !self.no_augment,
            ..TrainConfig::default()
        }
    }

    fn argv(&self) -> Vec<String> {
        let mut v = vec!["train".to_string()];
        flag(&mut v, "task", self.task.name());
        flag(&mut v, "arch", if self.arch == Arch::Ga { "ga" } else { "dgcnn" });
        flag(&mut v, "data", path_str(&self.data));
        flag(&mut v, "out", path_str(&self.out));
        flag(&mut v, "epochs", self.epochs);
        flag(&mut v, "batch-size", self.batch_size);
        flag(&mut v, "lr", self.lr);
        flag(&mut v, "mse-weight", self.mse_weight);
        flag(&mut v, "seed", self.seed);
        flag(&mut v, "model-seed", self.model_seed);
        switch(&mut v, "no-augment", self.no_augment);
        flag(&mut v, "k", self.k);
        flag(&mut v, "widths", join(&self.widths));
        flag(&mut v, "semantic-width", self.semantic_width);
        flag(&mut v, "global-width", self.global_width);
        flag(&mut v, "head-widths", join(&self.head_widths));
        flag(&mut v, "leaky-slope", self.leaky_slope);
        switch(&mut v, "ga-weighted", self.ga_weighted);
        switch(&mut v, "sequential", self.sequential);
        v
    }
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let model = a.model();
    let training = a.training();
    model.validate()?;
    training.validate()?;
    require_file(&a.data.join(SPLIT_FILE), "split manifest")?;
    let config = serde_json::json!({ "model": model, "training": training });
    let mut m = RunManifest::new("train", a.argv(), config).seed("model", model.seed).seed("training", training.seed);
    m.inputs = vec![a.data.clone()];
    m.outputs = [CHECKPOINT_FILE, LAST_CHECKPOINT_FILE, LOG_FILE].iter().map(|f| a.out.join(f)).collect();
    m.write(&a.out.join(MANIFEST_FILE))?;

    let outcome = train(&model, &training, &a.data, execution(a.sequential))?;
    write_checkpoint(a.out.join(CHECKPOINT_FILE), &outcome.best)?;
    write_checkpoint(a.out.join(LAST_CHECKPOINT_FILE), &outcome.last)?;
    outcome.log.write_csv(a.out.join(LOG_FILE))?;
    for row in outcome.log.rows.iter().filter(|r| r.split == "val") {
        println!("epoch {:>3} val {} = {:.6}", row.epoch, row.metric, row.value);
    }
    println!("best epoch {} written to {}", outcome.best.epoch, a.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

impl EvalArgs {
    fn report_path(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            self.checkpoint.parent().unwrap_or(Path::new(".")).join(format!("report_{}.json", self.split))
        })
    }

    fn argv(&self) -> Vec<String> {
        let mut v = vec!["eval".to_string()];
        flag(&mut v, "checkpoint", path_str(&self.checkpoint));
        flag(&mut v, "data", path_str(&self.data));
        flag(&mut v, "split", &self.split);
        flag(&mut v, "out", path_str(&self.report_path()));
        flag(&mut v, "threshold", self.threshold);
        switch(&mut v, "oriented-rmse", self.oriented_rmse);
        switch(&mut v, "sequential", self.sequential);
        v
    }
}

fn print_report(r: &MetricsReport) {
    let a = &r.aggregate;
    println!("patches {} points {}", r.n_patches, r.n_points);
    for (name, v) in [
        ("angular_loss", a.angular_loss),
        ("rmse", a.rmse),
        ("bce", a.bce),
        ("balanced_accuracy", a.balanced_accuracy),
    ] {
        if let Some(v) = v {
            println!("{name} {v:.6}");
        }
    }
}

fn eval_cmd(a: &EvalArgs) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.data.join(SPLIT_FILE), "split manifest")?;
    let split = Split::parse(&a.split).ok_or_else(|| CliError::usage(format!("unknown split {}", a.split)))?;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::usage(format!("--threshold {} outside (0, 1)", a.threshold)));
    }
    let options = EvalOptions { threshold: a.threshold, unoriented_rmse: !a.oriented_rmse };
    let out = a.report_path();
    let mut m = RunManifest::new("eval", a.argv(), serde_json::to_value(options).map_err(anyhow::Error::from)?);
    m.inputs = vec![a.checkpoint.clone(), a.data.clone()];
    m.outputs = vec![out.clone()];
    m.write(&beside(&out))?;

    let ckpt = read_checkpoint(&a.checkpoint)?;
    load_manifest(&a.data)?;
    let report = evaluate(&ckpt, split, &a.data, &options, execution(a.sequential))?;
    std::fs::write(&out, report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    print_report(&report);
    println!("report written to {}", out.display());
    Ok(())
}

impl InspectArgs {
    fn argv(&self) -> Vec<String> {
        let mut v = vec!["inspect".to_string()];
        flag(&mut v, "checkpoint", path_str(&self.checkpoint));
        flag(&mut v, "patch", path_str(&self.patch));
        flag(&mut v, "query", self.query);
        flag(&mut v, "layer", self.layer);
        flag(&mut v, "out", path_str(&self.out));
        v
    }
}

fn inspect(a: &InspectArgs) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.patch, "patch")?;
    let mut m = RunManifest::new("inspect", a.argv(), serde_json::json!({ "query": a.query, "layer": a.layer }));
    m.inputs = vec![a.checkpoint.clone(), a.patch.clone()];
    m.outputs = vec![a.out.clone()];

    let ckpt = read_checkpoint(&a.checkpoint)?;
    let patch = read_patch(&a.patch)?;
    if ckpt.model.arch != Arch::Ga {
        return Err(CliError::usage("inspect needs a Geometric Attention checkpoint"));
    }
    if a.query >= patch.len() {
        return Err(CliError::usage(format!("--query {} out of range for {} points", a.query, patch.len())));
    }
    if a.layer >= ckpt.model.n_layers() {
        return Err(CliError::usage(format!("--layer {} out of range for {} layers", a.layer, ckpt.model.n_layers())));
    }
    m.write(&beside(&a.out))?;

    let pred = forward(&patch.points_tensor::<f32>(), &ckpt.weights, &ckpt.model, true)?;
    let ga = &pred.attention_trace[a.layer].ga;
    let weights: Vec<f32> = ga.row(a.query).to_vec();
    let is_query: Vec<f32> = (0..patch.len()).map(|i| f32::from(u8::from(i == a.query))).collect();
    let mut columns: Vec<(&str, Vec<f32>)> = vec![("weight", weights), ("query", is_query)];
    if let Some(ns) = &pred.normals {
        for (c, name) in ["pred_nx", "pred_ny", "pred_nz"].into_iter().enumerate() {
            columns.push((name, (0..ns.rows()).map(|i| ns.at(i, c)).collect()));
        }
    }
    if let Some(z) = &pred.sharp_logits {
        columns.push(("pred_sharp", z.iter().map(|&v| sigmoid(v)).collect()));
    }
    if let Some(s) = &patch.sharp {
        columns.push(("label_sharp", s.iter().map(|&v| f32::from(v)).collect()));
    }
    let cols: Vec<(&str, &[f32])> = columns.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    save_ply(&a.out, &patch.points, &cols)?;
    let total: f64 = ga.row(a.query).iter().map(|&v| v as f64).sum();
    println!("attention row of point {} at layer {} (sum {total:.6}) written to {}", a.query, a.layer, a.out.display());
    Ok(())
}

fn rerun(a: &RerunArgs) -> CliResult<()> {
    require_file(&a.manifest, "run manifest")?;
    let m = RunManifest::read(&a.manifest).map_err(CliError::Usage)?;
    let mut argv = vec!["geoattn".to_string()];
    argv.extend(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(format!("manifest flags: {e}")))?;
    let command = match (cli.command, &a.out) {
        (Command::Rerun(_), _) => return Err(CliError::usage("a manifest cannot record rerun")),
        (c, None) => c,
        (Command::Generate(mut g), Some(o)) => {
            g.out = o.clone();
            Command::Generate(g)
        }
        (Command::Train(mut t), Some(o)) => {
            t.out = o.clone();
            Command::Train(t)
        }
        (Command::Eval(mut e), Some(o)) => {
            e.out = Some(o.clone());
            Command::Eval(e)
        }
        (Command::Inspect(mut i), Some(o)) => {
            i.out = o.clone();
            Command::Inspect(i)
        }
    };
    run(command)
}
