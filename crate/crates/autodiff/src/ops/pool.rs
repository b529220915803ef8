/// Max pooling over `[N, C, H, W]` without padding (floor mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl PoolGeom {
    /// Output values and the flat input index of each maximum.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let out_n = self.planes * self.ho * self.wo;
        let mut y = Vec::with_capacity(out_n);
        let mut arg = Vec::with_capacity(out_n);
        for pl in 0..self.planes {
            let base = pl * self.h * self.w;
            for oh in 0..self.ho {
                for ow in 0..self.wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base + oh * self.sh * self.w + ow * self.sw;
                    for ki in 0..self.kh {
                        let row = base + (oh * self.sh + ki) * self.w;
                        for kj in 0..self.kw {
                            let i = row + ow * self.sw + kj;
                            // strict '>' keeps the first maximum
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i);
                }
            }
        }
        (y, arg)
    }
}

pub fn backward(argmax: &[usize], dy: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}
