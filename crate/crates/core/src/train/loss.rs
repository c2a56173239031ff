use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which patch positions the reconstruction loss covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    #[default]
    All,
    /// Only positions not observed by any glimpse.
    MaskedOnly,
}

/// RMSE between predicted and target patch rows (`N × P²C`).
pub fn reconstruction_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    pred: Var,
    target: &Tensor<T>,
    scope: LossScope,
    known: &[bool],
) -> Result<Var> {
    let (pred, target) = match scope {
        LossScope::All => (pred, target.clone()),
        LossScope::MaskedOnly => {
            let rows: Vec<usize> = (0..known.len()).filter(|&i| !known[i]).collect();
            if rows.is_empty() {
                return Err(contract("masked-only loss with every patch known"));
            }
            (tape.gather_rows(pred, &rows)?, target.gather_rows(&rows)?)
        }
    };
    if tape.value(pred).numel() == 0 {
        return Err(contract("reconstruction loss over an empty scope"));
    }
    let t = tape.constant(target);
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    let m = tape.mean(sq)?;
    tape.sqrt(m)
}

/// `CE(logits, label) + λ · decoder_loss`.
pub fn classification_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    logits: Var,
    label: usize,
    decoder_loss: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    let ce = tape.cross_entropy(logits, &[Some(label)])?;
    match decoder_loss {
        Some(d) if lambda != 0.0 => {
            let w = tape.scale(d, T::of(lambda))?;
            tape.add(ce, w)
        }
        _ => Ok(ce),
    }
}

/// Mean pixel cross-entropy. `patch_out` is `N × (P²·C′)` in (row, column,
/// class) layout; `labels` is the `H × W` grid.
#[allow(clippy::too_many_arguments)]
pub fn segmentation_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    patch_out: Var,
    labels: &[u16],
    num_classes: usize,
    patch: usize,
    grid_cols: usize,
    image_w: usize,
    ignore: Option<u16>,
) -> Result<Var> {
    let (n, pd) = tape.value(patch_out).dims2()?;
    if pd != patch * patch * num_classes {
        return Err(contract(format!(
            "head width {pd} does not match {num_classes} classes"
        )));
    }
    let logits = tape.reshape(patch_out, &[n * patch * patch, num_classes])?;
    let mut targets = Vec::with_capacity(n * patch * patch);
    for k in 0..n {
        for py in 0..patch {
            for px in 0..patch {
                let (y, x) = ((k / grid_cols) * patch + py, (k % grid_cols) * patch + px);
                let t = *labels
                    .get(y * image_w + x)
                    .ok_or_else(|| contract("label grid smaller than the image"))?;
                targets.push((Some(t) != ignore).then_some(t as usize));
            }
        }
    }
    tape.cross_entropy(logits, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rmse;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn value(tape: &Tape<'_, f64>, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn rmse_zero_and_offset() {
        let t = Tensor::<f64>::from_f64([2, 2], &[0.1, 0.5, 0.9, 0.3]).unwrap();
        let mut tape = Tape::inference();
        let p = tape.constant(t.clone());
        let l = reconstruction_loss(&mut tape, p, &t, LossScope::All, &[false; 2]).unwrap();
        assert_eq!(value(&tape, l), 0.0);
        let p = tape.constant(t.map(|v| v + 0.1));
        let l = reconstruction_loss(&mut tape, p, &t, LossScope::All, &[false; 2]).unwrap();
        assert!((value(&tape, l) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_two_pass_and_metric() {
        let mut rng = stream(1, Purpose::Test, 0);
        let a = Tensor::<f64>::new([6, 5], (0..30).map(|_| rng.random()).collect()).unwrap();
        let b = Tensor::<f64>::new([6, 5], (0..30).map(|_| rng.random()).collect()).unwrap();
        let mut tape = Tape::inference();
        let p = tape.constant(a.clone());
        let l = reconstruction_loss(&mut tape, p, &b, LossScope::All, &[false; 6]).unwrap();
        let l = value(&tape, l);
        let mut ss = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            ss += (x - y) * (x - y);
        }
        assert!((l - (ss / 30.0).sqrt()).abs() < 1e-7);
        assert_eq!(l, rmse(&a, &b).unwrap());
    }

    #[test]
    fn masked_scope() {
        let t = Tensor::<f64>::from_f64([2, 1], &[0.0, 0.0]).unwrap();
        let mut tape = Tape::inference();
        let p = tape.constant(Tensor::from_f64([2, 1], &[5.0, 0.5]).unwrap());
        let l = reconstruction_loss(&mut tape, p, &t, LossScope::MaskedOnly, &[true, false]).unwrap();
        assert_eq!(value(&tape, l), 0.5);
        assert!(reconstruction_loss(&mut tape, p, &t, LossScope::MaskedOnly, &[true, true]).is_err());
    }

    #[test]
    fn classification_hand_computed() {
        // logits [0, ln 3] → p = [1/4, 3/4]; label 0 → CE = ln 4
        let mut tape = Tape::<f64>::inference();
        let logits = tape.constant(Tensor::from_f64([1, 2], &[0.0, 3f64.ln()]).unwrap());
        let dec = tape.constant(Tensor::scalar(0.2));
        let pure = classification_loss(&mut tape, logits, 0, Some(dec), 0.0).unwrap();
        assert!((value(&tape, pure) - 4f64.ln()).abs() < 1e-12);
        let mixed = classification_loss(&mut tape, logits, 0, Some(dec), 1.0).unwrap();
        assert!((value(&tape, mixed) - (4f64.ln() + 0.2)).abs() < 1e-7);
        assert!(classification_loss(&mut tape, logits, 2, None, 1.0).is_err());
        let uniform = tape.constant(Tensor::zeros([1, 5]));
        let u = classification_loss(&mut tape, uniform, 3, None, 1.0).unwrap();
        assert!((value(&tape, u) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn segmentation_cases() {
        // one 1×2 patch grid of 1-pixel patches, 2 classes
        let mut tape = Tape::<f64>::inference();
        let out = tape.constant(Tensor::from_f64([2, 2], &[0.0, 3f64.ln(), 1.0, 1.0]).unwrap());
        let l = segmentation_loss(&mut tape, out, &[1, 0], 2, 1, 2, 2, None).unwrap();
        let want = ((4.0f64 / 3.0).ln() + 2f64.ln()) / 2.0;
        assert!((value(&tape, l) - want).abs() < 1e-7);
        let sharp = tape.constant(Tensor::from_f64([2, 2], &[20.0, 0.0, 0.0, 20.0]).unwrap());
        let l = segmentation_loss(&mut tape, sharp, &[0, 1], 2, 1, 2, 2, None).unwrap();
        assert!(value(&tape, l) < 1e-3);
        let uni = tape.constant(Tensor::zeros([2, 3]));
        let l = segmentation_loss(&mut tape, uni, &[0, 2], 3, 1, 2, 2, None).unwrap();
        assert!((value(&tape, l) - 3f64.ln()).abs() < 1e-12);
        assert!(segmentation_loss(&mut tape, uni, &[7, 7], 3, 1, 2, 2, Some(7)).is_err());
    }
}
