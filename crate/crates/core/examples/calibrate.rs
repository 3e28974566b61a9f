use ivcn::data::*;
use ivcn::model::*;
use ivcn::rng::{streams, Rng};
use ivcn::train::*;
use std::time::Instant;

fn main() {
    for seed in [7u64, 42, 1, 2, 3] {
        let spec = SyntheticSpec { per_class: 250, size: 48 };
        let mut ds = generate_synthetic(&spec, &mut Rng::with_stream(seed, streams::SYNTH));
        split_dataset(&mut ds, Rng::with_stream(seed, streams::SPLIT).next_u64()).unwrap();
        let mut aug_rng = Rng::with_stream(seed, streams::AUGMENT);
        augment_dataset(&mut ds, &AugmentSpec::default(), &mut aug_rng).unwrap();
        let mut model = build_model(ModelVariant::Hybrid { inv_layers: 3 },
                                    &mut Rng::with_stream(seed, streams::INIT)).unwrap();
        let cfg = TrainConfig { seed, epochs: 10, ..Default::default() };
        let t0 = Instant::now();
        let log = train(&mut model, &ds, &cfg).unwrap();
        let test = evaluate(&mut model, &ds, Split::Test).unwrap();
        let accs: Vec<String> = log.iter().map(|r| format!("{:.0}", r.val_accuracy)).collect();
        eprintln!("seed {seed}: val per epoch [{}] test {:.1} ({:.0}s)",
            accs.join(","), test.accuracy, t0.elapsed().as_secs_f64());
    }
}
