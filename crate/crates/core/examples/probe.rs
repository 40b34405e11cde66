use lumendet::arch::{Model, ModelConfig, Variant};
use lumendet::data::{generate_dataset, Split, SynthSpec, TABLE1_FRACTIONS};
use lumendet::infer::{evaluate, load_prepared, Detector};
use lumendet::train::fit;
use lumendet::train::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args[1].parse().unwrap();
    let lr: f32 = args[2].parse().unwrap();
    let variant: Variant = args[3].parse().unwrap();
    let seed: u64 = args[4].parse().unwrap();
    let dir = std::path::Path::new("/tmp/probe_ds");
    let splits = generate_dataset(&SynthSpec::default(), 409, TABLE1_FRACTIONS, dir).unwrap();
    let tr = load_prepared(splits.get(Split::Train), 160, 160).unwrap();
    let va = load_prepared(splits.get(Split::Val), 160, 160).unwrap();
    let t1 = load_prepared(splits.get(Split::Test1), 160, 160).unwrap();
    let t2 = load_prepared(splits.get(Split::Test2), 160, 160).unwrap();
    println!("train {}", tr.len());
    let mut cfg = TrainConfig::default();
    cfg.epochs = epochs; cfg.lr0 = lr; cfg.seed = seed;
    let mut model = Model::new(ModelConfig::default().with_variant(variant), seed).unwrap();
    println!("params {}", model.num_params());
    let t = std::time::Instant::now();
    let out = fit(&mut model, &tr, &va, &cfg, |r| println!("{:?} {:.0}s", r, t.elapsed().as_secs_f32())).unwrap();
    let best = Model::from_checkpoint(&out.best).unwrap();
    println!("best epoch {}", out.best_epoch);
    for (name, d) in [("test1", &t1), ("test2", &t2)] {
        let det = Detector::new(&best, 160, 0.001, 0.45);
        let r = evaluate(&det, d, 16).unwrap();
        println!("{name} map50 {:.3} map5095 {:.3} P {:.3} R {:.3}", r.map50, r.map5095, r.precision_best_f1, r.recall_best_f1);
    }
    for s in [160usize, 96, 64] {
        let d = load_prepared(splits.get(Split::Test1), s, s).unwrap();
        let det = Detector::new(&best, s, 0.001, 0.45);
        println!("size {s} map50 {:.3}", evaluate(&det, &d, 16).unwrap().map50);
    }
}
