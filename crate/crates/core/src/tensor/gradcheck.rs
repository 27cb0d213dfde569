//! Central-difference validation of tape gradients.

use super::tape::{NodeId, Tape};
use super::{Result, Tensor2, TensorError};

/// Compare analytic gradients of a scalar-valued computation against
/// central finite differences at `point`.
///
/// `build` receives a fresh tape plus one leaf per parameter tensor and
/// returns the scalar output node. Returns the max over all parameter
/// entries of |analytic - central| / max(1, |central|).
pub fn grad_check<F>(point: &[Tensor2], build: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-5..=1e-3).contains(&step) {
        return Err(TensorError::BadStep { step });
    }

    let eval = |tensors: &[Tensor2]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &leaves)?;
        tape.value(out).scalar()
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves)?;
    let shape = tape.value(out).shape();
    if shape != (1, 1) {
        return Err(TensorError::NonScalarOutput {
            rows: shape.0,
            cols: shape.1,
        });
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0_f64;
    let mut working: Vec<Tensor2> = point.to_vec();
    for (p, leaf) in leaves.iter().enumerate() {
        let analytic = &grads[leaf.index()];
        for idx in 0..point[p].data().len() {
            let orig = working[p].data()[idx];
            working[p].data_mut()[idx] = orig + step;
            let up = eval(&working)?;
            working[p].data_mut()[idx] = orig - step;
            let down = eval(&working)?;
            working[p].data_mut()[idx] = orig;
            let central = (up - down) / (2.0 * step);
            let err = (analytic.data()[idx] - central).abs() / central.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
