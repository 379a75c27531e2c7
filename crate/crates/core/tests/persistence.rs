use polyformer::basis::BasisKind;
use polyformer::cache::{decode_tokens, encode_tokens, read_token_cache, write_token_cache};
use polyformer::graph::{grid_graph, random_graph};
use polyformer::matrix::DenseMatrix;
use polyformer::model::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, AnyModel, ModelConfig, ModelSpec};
use polyformer::polyattn::Activation;
use polyformer::tokens::compute_tokens;
use polyformer::train::{split_nodes, token_batch, train_loop, write_history_csv, EpochRecord, Targets, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn classifier(seed: u64) -> ModelConfig {
    ModelConfig {
        basis: BasisKind::Chebyshev,
        cheb_shifted: false,
        order: 4,
        input_dim: 2,
        hidden: 4,
        blocks: 2,
        heads: 2,
        ffn_dim: 6,
        classes: 3,
        readout_dim: 6,
        activation: Activation::Tanh,
        r: 1.0,
        mlp_factor: 1.0,
        dropout: 0.1,
        seed,
    }
}

fn toy() -> (polyformer::tokens::TokenTensor, Vec<usize>) {
    let g = grid_graph(7, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DenseMatrix::from_vec(49, 2, (0..98).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let labels = (0..49).map(|i| usize::from(x.get(i, 0) > 0.33) + usize::from(x.get(i, 0) > 0.66)).collect();
    (compute_tokens(&g, &x, BasisKind::Chebyshev, 4, false).unwrap(), labels)
}

fn history_bits(h: &[EpochRecord]) -> Vec<(usize, u64, u64, Option<u64>)> {
    h.iter()
        .map(|r| (r.epoch, r.train_loss.to_bits(), r.val_metric.to_bits(), r.test_metric.map(f64::to_bits)))
        .collect()
}

#[test]
fn token_cache_round_trip_is_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    for basis in BasisKind::ALL {
        let g = random_graph(30, 0.2, &mut rng).unwrap();
        let x = DenseMatrix::from_vec(30, 3, (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let t = compute_tokens(&g, &x, basis, 6, basis == BasisKind::Chebyshev).unwrap();
        let bytes = encode_tokens(&t);
        let back = decode_tokens(&bytes).unwrap();
        assert_eq!(encode_tokens(&back), bytes);
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let path = dir.path().join(format!("{basis}.ptk"));
        write_token_cache(&t, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(read_token_cache(&path).unwrap(), t);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let (tokens, labels) = toy();
    let mut model = ModelSpec::PolyFormer(classifier(5)).build().unwrap();
    let masks = split_nodes(49, (0.6, 0.2, 0.2), 0).unwrap();
    let cfg = TrainConfig { lr: 0.01, weight_decay: 1e-4, max_epochs: 5, patience: 5, batch_size: Some(8), seed: 1 };
    train_loop(&mut model, &token_batch(&tokens), &Targets::Classes { labels, classes: 3 }, &masks, &cfg).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pfm");
    write_checkpoint(&model, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(read_checkpoint(&path).unwrap(), model);
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (tokens, labels) = toy();
    let batch = token_batch(&tokens);
    let targets = Targets::Classes { labels, classes: 3 };
    let masks = split_nodes(49, (0.6, 0.2, 0.2), 4).unwrap();
    let cfg = TrainConfig { lr: 0.01, weight_decay: 0.0, max_epochs: 25, patience: 25, batch_size: Some(10), seed: 8 };
    let run = |seed: u64| {
        let mut m = ModelSpec::PolyFormer(classifier(seed)).build().unwrap();
        let out = train_loop(&mut m, &batch, &targets, &masks, &cfg).unwrap();
        (history_bits(&out.history), encode_checkpoint(&m).unwrap(), out.history)
    };
    let (a, ca, ha) = run(2);
    let (b, cb, _) = run(2);
    let (c, _, _) = run(3);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_ne!(a, c);
    let mut csv = Vec::new();
    write_history_csv(&ha, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().lines().count() == ha.len() + 1);
}

#[test]
fn spec_builds_identical_model() {
    let spec = ModelSpec::PolyFormer(classifier(9));
    let (a, b) = (spec.build().unwrap(), spec.build().unwrap());
    assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    assert!(matches!(a, AnyModel::PolyFormer(_)));
    assert_eq!(a.spec(), spec);
}
