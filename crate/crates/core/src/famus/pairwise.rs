use crate::error::{Error, Result};
use crate::nn::{PerExampleGrads, Tensor};

/// Train/validation gradient similarity at one layer: entry `(i, j)` is the
/// dot product of training gradient `i` and validation gradient `j` over the
/// layer's weight and bias.
pub fn pairwise_g(
    train: &PerExampleGrads,
    val: &PerExampleGrads,
    layer_index: usize,
) -> Result<Tensor> {
    let t = train.layer(layer_index)?;
    let v = val.layer(layer_index)?;
    if t.weight.shape()[1..] != v.weight.shape()[1..] {
        return Err(Error::dim(format!(
            "layer {layer_index}: training gradients {:?} vs validation gradients {:?}",
            t.weight.shape(),
            v.weight.shape()
        )));
    }
    let (n, m) = (t.batch_size(), v.batch_size());
    let mut g = Tensor::zeros(vec![n, m]);
    // Blocks of training rows stay cache-resident while validation rows stream past.
    const BLOCK: usize = 4;
    for i0 in (0..n).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n);
        for j in 0..m {
            for i in i0..i1 {
                g.data_mut()[i * m + j] = t.dot_examples(i, v, j);
            }
        }
    }
    Ok(g)
}
