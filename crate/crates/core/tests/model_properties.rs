//! Forward-pass properties of the fixture model.

mod common;

use rand::Rng;
use tokdistill::fixture::load_fixture;
use tokdistill::model::{load_checkpoint, save_checkpoint, ForwardOptions};

#[test]
fn later_tokens_never_change_earlier_states() {
    let fx = load_fixture().unwrap();
    let w = &fx.weights;
    let n_layers = w.config.n_layers;
    let v = w.config.vocab_size as u32;
    let mut rng = common::rng(31);
    for _ in 0..20 {
        let len = rng.random_range(2..40);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..v)).collect();
        let cut = rng.random_range(1..len);
        let mut other = ids.clone();
        for id in &mut other[cut..] {
            *id = rng.random_range(0..v);
        }
        let a = w
            .forward(&ids, None, &ForwardOptions::full(n_layers))
            .unwrap();
        let b = w
            .forward(&other, None, &ForwardOptions::full(n_layers))
            .unwrap();
        for l in 0..=n_layers {
            let (x, y) = (a.state(l).unwrap(), b.state(l).unwrap());
            for r in 0..cut {
                assert_eq!(x.row(r), y.row(r), "layer {l} row {r}");
            }
        }
        let (la, lb) = (a.logits.unwrap(), b.logits.unwrap());
        for r in 0..cut {
            assert_eq!(la.row(r), lb.row(r));
        }
        let prefix = w
            .forward(&ids[..cut], None, &ForwardOptions::full(n_layers))
            .unwrap();
        assert_eq!(prefix.logits.unwrap().row(cut - 1), la.row(cut - 1));
    }
}

#[test]
fn single_and_double_precision_agree() {
    let fx = load_fixture().unwrap();
    let w64 = fx.weights.cast::<f64>();
    let n_layers = fx.weights.config.n_layers;
    let ids: Vec<u32> = (0..48).map(|i| (i * 37 % 500) as u32).collect();
    let a = fx
        .weights
        .forward(&ids, None, &ForwardOptions::full(n_layers))
        .unwrap();
    let b = w64
        .forward(&ids, None, &ForwardOptions::full(n_layers))
        .unwrap();
    let (la, lb) = (a.logits.unwrap(), b.logits.unwrap());
    let worst = la
        .data()
        .iter()
        .zip(lb.data())
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let fx = load_fixture().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.ckpt");
    save_checkpoint(&fx.weights, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), fx.weights);
    let shipped = std::fs::read(tokdistill::fixture::fixture_dir().join("model.ckpt")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), shipped);
}
