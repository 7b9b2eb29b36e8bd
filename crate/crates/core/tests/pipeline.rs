use geoattn::data::{generate_dataset, load_manifest, load_split, write_dataset, DatasetSpec, ShapeFamily, Split};
use geoattn::network::{read_checkpoint, write_checkpoint, Arch, ModelConfig, Task};
use geoattn::par::Execution;
use geoattn::training::{evaluate, train, EvalOptions, TrainConfig, TrainingLog};

fn small(arch: Arch, task: Task) -> ModelConfig {
    ModelConfig {
        arch,
        task,
        k: 6,
        widths: vec![8, 8],
        semantic_width: 8,
        global_width: 16,
        head_widths: vec![16],
        seed: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn generate_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec { shapes: vec![ShapeFamily::Wedge, ShapeFamily::SphereCap], count: 12, n_points: 96, spacing: 0.05, seed: 3, random_orientation: true };
    let patches = generate_dataset(&spec, Execution::Parallel).unwrap();
    let manifest = write_dataset(dir.path(), &patches, 3).unwrap();
    assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
    assert_eq!(load_split(dir.path(), Split::Test).unwrap().len(), 2);

    for arch in [Arch::Dgcnn, Arch::Ga] {
        for task in [Task::Normals, Task::Sharp] {
            let model = small(arch, task);
            let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
            let outcome = train(&model, &cfg, dir.path(), Execution::Parallel).unwrap();
            assert_eq!(outcome.log.epochs(), 2);
            assert_eq!(TrainingLog::parse_csv(&outcome.log.to_csv()).unwrap(), outcome.log);
            assert!(outcome.batch_losses.iter().flatten().all(|l| l.is_finite()));

            let path = dir.path().join("ck.gack");
            write_checkpoint(&path, &outcome.best).unwrap();
            let ckpt = read_checkpoint(&path).unwrap();
            assert_eq!(ckpt.model, model);

            let seq = evaluate(&ckpt, Split::Val, dir.path(), &EvalOptions::default(), Execution::Sequential).unwrap();
            let par = evaluate(&ckpt, Split::Val, dir.path(), &EvalOptions::default(), Execution::Parallel).unwrap();
            assert_eq!(seq.to_json().unwrap(), par.to_json().unwrap());
            assert_eq!(seq.n_patches, 2);
            assert_eq!(seq.histogram.total(), 2);
            match task {
                Task::Normals => {
                    let a = seq.aggregate.angular_loss.unwrap();
                    assert!((0.0..=1.0).contains(&a));
                    assert!(seq.aggregate.balanced_accuracy.is_none());
                }
                Task::Sharp => {
                    let ba = seq.aggregate.balanced_accuracy.unwrap();
                    assert!((0.0..=1.0).contains(&ba));
                    assert!(seq.aggregate.angular_loss.is_none());
                }
            }
        }
    }
}

#[test]
fn training_is_identical_in_both_execution_modes() {
    let spec = DatasetSpec { shapes: vec![ShapeFamily::Cylinder], count: 6, n_points: 80, spacing: 0.05, seed: 8, random_orientation: true };
    let patches = generate_dataset(&spec, Execution::Sequential).unwrap();
    let model = small(Arch::Ga, Task::Normals);
    let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
    let (train, val) = (&patches[..4], &patches[4..]);
    let a = geoattn::training::train_on(&model, &cfg, train, val, Execution::Sequential).unwrap();
    let b = geoattn::training::train_on(&model, &cfg, train, val, Execution::Parallel).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best.weights, b.best.weights);
}
