//! Finite-difference check of the analytic gradients.

use serde::Serialize;

use super::loss::{loss_on_tape, Alignment};
use super::network::Model;
use super::params::Grads;
use super::tape::Tape;
use crate::error::Result;
use crate::sampler::SerializedInput;
use crate::sketch::SqlSketch;

/// Denominator floor of the relative error, so that entries whose gradient is
/// zero on both sides compare by absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Training loss of one example, teacher-forced.
pub fn example_loss(model: &Model, input: &SerializedInput, gold: &SqlSketch, align: &Alignment) -> Result<f64> {
    let mut tape = Tape::new(&model.params);
    let g = model.forward(&mut tape, input, Some(gold.select), None)?;
    let (l, _) = loss_on_tape(&mut tape, &g, gold, align);
    Ok(tape.scalar(l))
}

pub fn analytic_grads(model: &Model, input: &SerializedInput, gold: &SqlSketch, align: &Alignment) -> Result<Grads> {
    let mut tape = Tape::new(&model.params);
    let g = model.forward(&mut tape, input, Some(gold.select), None)?;
    let (l, _) = loss_on_tape(&mut tape, &g, gold, align);
    let mut grads = Grads::zeros_like(&model.params);
    tape.backward(l, &mut grads);
    Ok(grads)
}

/// Compares analytic gradients against five-point central differences
/// (error O(h^4)) with step `h`
/// for every entry of every parameter block. Embedding tables are checked on
/// the rows the input touches plus their first row.
pub fn gradient_check(
    model: &mut Model,
    cases: &[(SerializedInput, SqlSketch, Alignment)],
    h: f64,
) -> Result<Vec<BlockCheck>> {
    let total = |m: &Model| -> Result<f64> {
        cases
            .iter()
            .map(|(i, g, a)| example_loss(m, i, g, a))
            .sum::<Result<f64>>()
    };
    let mut grads = Grads::zeros_like(&model.params);
    for (input, gold, align) in cases {
        let g = analytic_grads(model, input, gold, align)?;
        for (i, t) in g.tensors().iter().enumerate() {
            grads.add(i, t);
        }
    }

    let mut used_tokens: Vec<usize> = cases
        .iter()
        .flat_map(|(i, _, _)| i.tokens.iter().map(|t| model.vocab.id(&t.text)))
        .collect();
    used_tokens.push(0);
    used_tokens.sort_unstable();
    used_tokens.dedup();
    let max_len = cases.iter().map(|(i, _, _)| i.len()).max().unwrap_or(0);

    let mut out = Vec::with_capacity(model.params.len());
    for p in 0..model.params.len() {
        let name = model.params.name(p).to_string();
        let (rows, cols) = model.params.tensor(p).dim();
        let row_list: Vec<usize> = match name.as_str() {
            "emb.tok" => used_tokens.clone(),
            "emb.pos" => (0..max_len.min(rows)).collect(),
            "emb.col" => (0..rows.min(1 + cases.iter().map(|(i, _, _)| i.n_columns).max().unwrap_or(0))).collect(),
            _ => (0..rows).collect(),
        };
        let mut check = BlockCheck {
            name,
            checked: 0,
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
        };
        for &r in &row_list {
            for c in 0..cols {
                let orig = model.params.tensor(p)[[r, c]];
                let mut at = |dx: f64| -> Result<f64> {
                    model.params.tensor_mut(p)[[r, c]] = orig + dx;
                    total(model)
                };
                let (up2, up, down, down2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
                model.params.tensor_mut(p)[[r, c]] = orig;
                let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * h);
                let analytic = grads.tensor(p)[[r, c]];
                let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
                check.max_rel_err = check.max_rel_err.max((analytic - numeric).abs() / denom);
                check.max_abs_grad = check.max_abs_grad.max(analytic.abs());
                check.checked += 1;
            }
        }
        out.push(check);
    }
    Ok(out)
}
