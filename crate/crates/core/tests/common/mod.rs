#![allow(dead_code)]

use gatebench::cells::{CellKind, GruVariant};
use gatebench::heads::HeadKind;
use gatebench::model::{ModelShape, SequenceBatchItem, SequenceModel};
use gatebench::numerics::{RngStream, Vector};

pub const GRAD_SEEDS: u64 = 10;

/// Every (cell, head, GRU variant) combination; tanh and LSTM appear once per head.
pub fn grad_combos() -> Vec<(CellKind, HeadKind, GruVariant)> {
    let mut out = Vec::new();
    for kind in CellKind::ALL {
        for head in [HeadKind::Bernoulli, HeadKind::Gmm { components: 3 }] {
            let variants: &[GruVariant] = if kind == CellKind::Gru {
                &GruVariant::ALL
            } else {
                &[GruVariant::CandidateGated]
            };
            for &v in variants {
                out.push((kind, head, v));
            }
        }
    }
    out
}

/// Random model and sequence with n ≤ 8, d ≤ 5, T ≤ 6.
pub fn grad_instance(
    kind: CellKind,
    head: HeadKind,
    variant: GruVariant,
    seed: u64,
) -> (SequenceModel, SequenceBatchItem) {
    let n = 3 + (seed % 6) as usize;
    let d = 1 + (seed % 5) as usize;
    let steps = 2 + (seed % 5) as usize;
    let shape = ModelShape {
        kind,
        head,
        hidden: n,
        d_in: d,
        d_out: d,
        gru_variant: variant,
    };
    let mut rng = RngStream::new(1000 + seed);
    let model = SequenceModel::new(shape, &mut rng, 1.0).unwrap();
    let inputs: Vec<Vector> = (0..steps)
        .map(|_| (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .collect();
    let targets: Vec<Vector> = (0..steps)
        .map(|_| match head {
            HeadKind::Bernoulli => (0..d).map(|_| f64::from(u8::from(rng.bernoulli(0.5)))).collect(),
            HeadKind::Gmm { .. } => (0..d).map(|_| rng.standard_normal()).collect(),
        })
        .collect();
    (model, SequenceBatchItem::new(inputs, targets).unwrap())
}
