//! Seeded parameter initialization and snapshots of a `VarStore`.
//!
//! Initialization draws from a per-tensor ChaCha stream keyed by the model
//! seed and the variable name, so it does not depend on libtorch's global
//! generator or on the order in which layers were created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use tch::{nn::VarStore, Tensor};

/// Derive an independent 64-bit seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Variables sorted by name.
pub fn sorted_variables(vs: &VarStore) -> Vec<(String, Tensor)> {
    let mut vars: Vec<_> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// He-normal (fan-in) conv and linear weights, unit batch-norm scales, zero
/// biases and shifts, and fresh running statistics.
pub fn reinitialize(vs: &VarStore, seed: u64) {
    tch::no_grad(|| {
        for (name, mut var) in sorted_variables(vs) {
            let size = var.size();
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let fill = match leaf {
                "running_mean" | "bias" => Some(0.0),
                "running_var" => Some(1.0),
                "weight" if size.len() == 1 => Some(1.0),
                _ => None,
            };
            if let Some(v) = fill {
                let _ = var.fill_(v);
                continue;
            }
            let fan_in: i64 = size.iter().skip(1).product::<i64>().max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0f64, std).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &name));
            let n: i64 = size.iter().product();
            let values: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            let src = Tensor::from_slice(&values)
                .view(size.as_slice())
                .to_kind(var.kind())
                .to_device(var.device());
            var.copy_(&src);
        }
    });
}

/// Deep copy of every variable.
pub fn snapshot(vs: &VarStore) -> Vec<(String, Tensor)> {
    sorted_variables(vs)
        .into_iter()
        .map(|(n, t)| (n, t.detach().copy()))
        .collect()
}

/// Copy a snapshot taken from the same store back into it.
pub fn restore(vs: &VarStore, snap: &[(String, Tensor)]) {
    let vars = vs.variables();
    tch::no_grad(|| {
        for (name, src) in snap {
            if let Some(dst) = vars.get(name) {
                let mut dst = dst.shallow_clone();
                dst.copy_(src);
            }
        }
    });
}

/// Number of trainable scalars.
pub fn num_trainable(vs: &VarStore) -> i64 {
    vs.trainable_variables()
        .iter()
        .map(|t| t.numel() as i64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{nn, Device, Kind};

    fn store() -> VarStore {
        let vs = VarStore::new(Device::Cpu);
        let _conv = nn::conv2d(vs.root() / "conv", 4, 8, 3, Default::default());
        let _bn = nn::batch_norm2d(vs.root() / "bn", 8, Default::default());
        vs
    }

    #[test]
    fn initialization_is_seeded_and_order_free() {
        let a = store();
        let b = store();
        reinitialize(&a, 5);
        reinitialize(&b, 5);
        for ((na, ta), (nb, tb)) in sorted_variables(&a).iter().zip(sorted_variables(&b).iter()) {
            assert_eq!(na, nb);
            assert!(ta.equal(tb), "{na}");
        }
        let w = &a.variables()["conv.weight"];
        let std = w.std(true).double_value(&[]);
        assert!((std - (2.0f64 / 36.0).sqrt()).abs() < 0.05, "std {std}");
        assert_eq!(
            a.variables()["bn.weight"]
                .sum(Kind::Float)
                .double_value(&[]),
            8.0
        );
    }

    #[test]
    fn snapshot_restores_values() {
        let vs = store();
        reinitialize(&vs, 1);
        let snap = snapshot(&vs);
        reinitialize(&vs, 2);
        assert!(!vs.variables()["conv.weight"]
            .equal(&snap.iter().find(|(n, _)| n == "conv.weight").unwrap().1));
        restore(&vs, &snap);
        for (n, t) in &snap {
            assert!(vs.variables()[n].equal(t));
        }
    }
}
