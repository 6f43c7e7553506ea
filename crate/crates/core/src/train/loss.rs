use crate::error::{Error, Result};
use crate::ndnum::{Array, NodeId, Scalar, Tape};

/// Mean over the batch of `-log softmax(predictions)[gt]`.
pub fn loss_ce<T: Scalar>(tape: &mut Tape<T>, predictions: NodeId, gt: &[usize]) -> Result<NodeId> {
    let ls = tape.log_softmax(predictions)?;
    let picked = tape.gather(ls, gt)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -T::one())
}

/// Mean over all `B*A` entries of the squared difference.
pub fn loss_reg<T: Scalar>(tape: &mut Tape<T>, predictions: NodeId, targets: NodeId) -> Result<NodeId> {
    if tape.value(predictions).shape() != tape.value(targets).shape() {
        return Err(Error::dim(
            "loss_reg",
            format!(
                "predictions {:?} vs targets {:?}",
                tape.value(predictions).shape(),
                tape.value(targets).shape()
            ),
        ));
    }
    let diff = tape.sub(predictions, targets)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Cross-entropy evaluated directly, without a tape.
pub fn ce_value(predictions: &Array<f64>, gt: &[usize]) -> Result<f64> {
    let (b, a) = (predictions.rows(), predictions.cols());
    if gt.len() != b {
        return Err(Error::dim("ce_value", format!("{} labels for {b} rows", gt.len())));
    }
    let mut total = 0.0;
    for (i, &g) in gt.iter().enumerate() {
        if g >= a {
            return Err(Error::dim("ce_value", format!("label {g} with {a} classes")));
        }
        let row = predictions.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[g];
    }
    Ok(total / b as f64)
}

pub fn reg_value(predictions: &Array<f64>, targets: &Array<f64>) -> Result<f64> {
    predictions.same_shape(targets, "reg_value")?;
    let n = predictions.len() as f64;
    Ok(predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}
