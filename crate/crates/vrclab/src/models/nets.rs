//! Fully-connected building blocks and the two scalar-map networks that
//! condition quantization on the step size.
//!
//! Graph and value forwards go through the same tensor kernels (affine, the
//! same elementwise maps), so evaluating a network outside a graph
//! reproduces the in-graph forward bit for bit.

use rand::Rng;

use crate::error::Result;
use crate::gradcore::num;
use crate::gradcore::{Graph, Tensor, Var};

use super::params::{Bound, ParamStore};

/// Offset head: (sigma, delta) -> delta-offset in [0, 0.5).
pub const OFFSET_NET_DIMS: [usize; 4] = [2, 12, 12, 1];
/// Hyper step head: delta -> delta_z > 0.
pub const DELTAZ_NET_DIMS: [usize; 4] = [1, 10, 10, 1];

pub fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_names(prefix: &str, layer: usize) -> (String, String) {
    (
        format!("{prefix}.l{}.w", layer + 1),
        format!("{prefix}.l{}.b", layer + 1),
    )
}

/// Xavier-uniform weights, zero biases except the last layer's, which is
/// set explicitly so output maps can start near a chosen value.
pub fn init_mlp(
    store: &mut ParamStore,
    prefix: &str,
    dims: &[usize],
    rng: &mut impl Rng,
    last_bias: f64,
) -> Result<()> {
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Tensor::new(
            vec![fan_in, fan_out],
            (0..fan_in * fan_out).map(|_| rng.gen_range(-s..s)).collect(),
        )?;
        let bias_val = if l == dims.len() - 2 { last_bias } else { 0.0 };
        let (wn, bn) = layer_names(prefix, l);
        store.insert(&wn, weights)?;
        store.insert(&bn, Tensor::full(vec![fan_out], bias_val))?;
    }
    Ok(())
}

/// Softplus between layers, linear head.
pub fn mlp_graph(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    dims: &[usize],
    x: Var,
) -> Result<Var> {
    let mut h = x;
    let layers = dims.len() - 1;
    for l in 0..layers {
        let (wn, bn) = layer_names(prefix, l);
        h = g.affine(h, bound.var(&wn)?, bound.var(&bn)?)?;
        if l + 1 < layers {
            h = g.softplus(h)?;
        }
    }
    Ok(h)
}

pub fn mlp_value(store: &ParamStore, prefix: &str, dims: &[usize], x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    let layers = dims.len() - 1;
    for l in 0..layers {
        let (wn, bn) = layer_names(prefix, l);
        h = h.affine(store.get(&wn)?, store.get(&bn)?)?;
        if l + 1 < layers {
            h = h.map(num::softplus);
        }
    }
    Ok(h)
}

pub const OFFSET_NET_PREFIX: &str = "theta.offset";
pub const DELTAZ_NET_PREFIX: &str = "theta.deltaz";

pub fn init_offset_net(store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    // sigmoid(-2)/2 ~ 0.06: offsets start small instead of mid-range
    init_mlp(store, OFFSET_NET_PREFIX, &OFFSET_NET_DIMS, rng, -2.0)
}

pub fn init_deltaz_net(store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    // softplus(ln(e-1)) = 1: the hyper step starts as the identity choice
    init_mlp(
        store,
        DELTAZ_NET_PREFIX,
        &DELTAZ_NET_DIMS,
        rng,
        (std::f64::consts::E - 1.0).ln(),
    )
}

/// Per-element offsets for a sigma tensor at a single step size; output
/// shape follows sigma. The step enters as a second input column.
pub fn offset_net_graph(g: &mut Graph, bound: &Bound, sigma: Var, delta: Var) -> Result<Var> {
    let shape = g.shape_of(sigma)?.to_vec();
    let rows: usize = shape.iter().product();
    let sig_col = g.reshape(sigma, &[rows, 1])?;
    let d1 = g.reshape(delta, &[1, 1])?;
    let d_col = g.broadcast(d1, &[rows, 1])?;
    let input = g.concat(&[sig_col, d_col], 1)?;
    let raw = mlp_graph(g, bound, OFFSET_NET_PREFIX, &OFFSET_NET_DIMS, input)?;
    let sig = g.sigmoid(raw)?;
    let half = g.scale(sig, 0.5)?;
    g.reshape(half, &shape)
}

pub fn offset_net_value(store: &ParamStore, sigma: &Tensor, delta: f64) -> Result<Tensor> {
    let rows = sigma.numel();
    let mut data = Vec::with_capacity(rows * 2);
    for &s in sigma.data() {
        data.push(s);
        data.push(delta);
    }
    let input = Tensor::new(vec![rows, 2], data)?;
    let raw = mlp_value(store, OFFSET_NET_PREFIX, &OFFSET_NET_DIMS, &input)?;
    let out: Vec<f64> = raw.data().iter().map(|&v| 0.5 * num::sigmoid(v)).collect();
    Tensor::new(sigma.shape().to_vec(), out)
}

/// delta_z as a 1x1 graph value, strictly positive via softplus.
pub fn deltaz_net_graph(g: &mut Graph, bound: &Bound, delta: Var) -> Result<Var> {
    let d1 = g.reshape(delta, &[1, 1])?;
    let raw = mlp_graph(g, bound, DELTAZ_NET_PREFIX, &DELTAZ_NET_DIMS, d1)?;
    g.softplus(raw)
}

pub fn deltaz_net_value(store: &ParamStore, delta: f64) -> Result<f64> {
    let input = Tensor::new(vec![1, 1], vec![delta])?;
    let raw = mlp_value(store, DELTAZ_NET_PREFIX, &DELTAZ_NET_DIMS, &input)?;
    Ok(num::softplus(raw.data()[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn stores() -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn param_counts_match_layer_arithmetic() {
        assert_eq!(mlp_param_count(&OFFSET_NET_DIMS), 205);
        assert_eq!(mlp_param_count(&DELTAZ_NET_DIMS), 141);
        assert!(mlp_param_count(&OFFSET_NET_DIMS) <= 300);
        assert!(mlp_param_count(&DELTAZ_NET_DIMS) <= 300);

        let (mut store, mut rng) = stores();
        init_offset_net(&mut store, &mut rng).unwrap();
        init_deltaz_net(&mut store, &mut rng).unwrap();
        assert_eq!(store.param_count(OFFSET_NET_PREFIX), 205);
        assert_eq!(store.param_count(DELTAZ_NET_PREFIX), 141);
    }

    #[test]
    fn offset_output_stays_in_half_open_unit_half() {
        let (mut store, mut rng) = stores();
        init_offset_net(&mut store, &mut rng).unwrap();
        for &(s, d) in &[
            (0.0, 1.0),
            (1e6, 1e6),
            (-1e6, 1e-6),
            (1e-12, 10.0),
            (3.0, 0.25),
        ] {
            let sigma = Tensor::from_vec(vec![s]);
            let out = offset_net_value(&store, &sigma, d).unwrap();
            let v = out.data()[0];
            assert!((0.0..0.5).contains(&v), "({s}, {d}) -> {v}");
        }
    }

    #[test]
    fn deltaz_output_is_positive_and_starts_at_one() {
        let (mut store, mut rng) = stores();
        init_deltaz_net(&mut store, &mut rng).unwrap();
        for &d in &[1e-6, 0.5, 1.0, 10.0, 1e6] {
            assert!(deltaz_net_value(&store, d).unwrap() > 0.0);
        }
        // zero-weight net: output bias alone drives softplus to 1
        let mut fresh = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_deltaz_net(&mut fresh, &mut rng).unwrap();
        for l in 1..=3 {
            let name = format!("{DELTAZ_NET_PREFIX}.l{l}.w");
            let zeros = Tensor::zeros(fresh.get(&name).unwrap().shape());
            fresh.set_value(&name, zeros).unwrap();
        }
        assert!((deltaz_net_value(&fresh, 5.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_and_value_forwards_agree_bitwise() {
        let (mut store, mut rng) = stores();
        init_offset_net(&mut store, &mut rng).unwrap();
        init_deltaz_net(&mut store, &mut rng).unwrap();
        let sigma = Tensor::new(vec![2, 3], vec![0.3, 1.0, 2.5, 4.0, 0.7, 9.0]).unwrap();
        let delta = 1.7;

        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let sv = g.constant(sigma.clone()).unwrap();
        let dv = g.scalar(delta).unwrap();
        let off = offset_net_graph(&mut g, &bound, sv, dv).unwrap();
        let dz = deltaz_net_graph(&mut g, &bound, dv).unwrap();

        let off_value = offset_net_value(&store, &sigma, delta).unwrap();
        assert_eq!(g.value(off).unwrap().data(), off_value.data());
        assert_eq!(g.shape_of(off).unwrap(), &[2, 3]);
        let dz_value = deltaz_net_value(&store, delta).unwrap();
        assert_eq!(g.value(dz).unwrap().data()[0], dz_value);
    }

    #[test]
    fn offset_net_gradients_flow_to_all_layers() {
        let (mut store, mut rng) = stores();
        init_offset_net(&mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g).unwrap();
        let sv = g.constant(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let dv = g.scalar(2.0).unwrap();
        let off = offset_net_graph(&mut g, &bound, sv, dv).unwrap();
        let sq = g.square(off).unwrap();
        let loss = g.reduce_sum(sq).unwrap();
        g.backward(loss).unwrap();
        for l in 1..=3 {
            for suffix in ["w", "b"] {
                let v = bound.var(&format!("{OFFSET_NET_PREFIX}.l{l}.{suffix}")).unwrap();
                let grad = g.grad(v).unwrap().expect("gradient present");
                assert!(grad.iter().any(|&x| x != 0.0), "dead layer l{l}.{suffix}");
            }
        }
    }
}
