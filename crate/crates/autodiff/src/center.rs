use crate::tensor::Tensor;

/// Moves each class center toward the batch mean of its embeddings:
/// `c ← (1 − α)·c + α·mean`. Classes absent from the batch keep their center.
pub fn update_centers(centers: &mut Tensor, embeddings: &Tensor, labels: &[usize], alpha: f64) {
    let d = centers.shape()[1];
    let classes = centers.shape()[0];
    let mut sums = vec![0.0; classes * d];
    let mut counts = vec![0usize; classes];
    for (row, &y) in embeddings.data().chunks(d).zip(labels) {
        counts[y] += 1;
        for (s, v) in sums[y * d..(y + 1) * d].iter_mut().zip(row) {
            *s += v;
        }
    }
    let c = centers.data_mut();
    for k in 0..classes {
        if counts[k] == 0 {
            continue;
        }
        for j in 0..d {
            let mean = sums[k * d + j] / counts[k] as f64;
            c[k * d + j] = (1.0 - alpha) * c[k * d + j] + alpha * mean;
        }
    }
}
