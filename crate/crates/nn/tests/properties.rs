use loopforge_nn::layers::{KvCache, Transformer};
use loopforge_nn::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn relu_signature(values: &[f64]) -> u64 {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(1, values.len(), values.to_vec()));
    let y = g.relu(x);
    g.sum(y);
    g.branch_signature()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stepping_matches_the_full_causal_pass(
        seed in 0u64..1000,
        len in 1usize..10,
        heads in prop::sample::select(vec![1usize, 2, 4]),
        data in prop::collection::vec(-2.0f64..2.0, 9 * 8),
    ) {
        let model = Transformer::new("dec", 2, 8, heads, 16);
        let mut store = ParamStore::new();
        model.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = Tensor::new(len, 8, data[..len * 8].to_vec());
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = model.forward(&mut g, &store, xv, true);
        let mut cache = KvCache::for_layers(2);
        for t in 0..len {
            let row = model.step(&store, &mut cache, x.row(t));
            prop_assert_eq!(row.as_slice(), g.value(y).row(t));
        }
    }

    #[test]
    fn branch_signature_tracks_relu_signs(
        values in prop::collection::vec(-1.0f64..1.0, 1..12),
        scale in 0.1f64..10.0,
        flip in any::<prop::sample::Index>(),
    ) {
        // positive rescaling keeps every sign, so the piece is unchanged
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert_eq!(relu_signature(&values), relu_signature(&scaled));
        let i = flip.index(values.len());
        prop_assume!(values[i] != 0.0);
        let mut flipped = values.clone();
        flipped[i] = -flipped[i];
        prop_assert_ne!(relu_signature(&values), relu_signature(&flipped));
    }
}

#[test]
fn smooth_graphs_have_a_constant_signature() {
    let sig = |v: f64| {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(1, 2, vec![v, -v]));
        let y = g.tanh(x);
        g.sum(y);
        g.branch_signature()
    };
    assert_eq!(sig(0.3), sig(-5.0));
}
