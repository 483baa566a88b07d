/// Cubic convolution (Catmull–Rom) resampling from a uniform grid onto a
/// fixed set of target points. The weights depend only on the targets, so
/// they are computed once and reused for every array.
///
/// Outside the grid the source is extended linearly (`f[-1] = 2 f[0] - f[1]`).
#[derive(Debug, Clone)]
pub struct CubicResampler {
    taps: Vec<[(usize, f64); 4]>,
    source_len: usize,
}

impl CubicResampler {
    pub fn new(x0: f64, dx: f64, source_len: usize, targets: &[f64]) -> Self {
        assert!(source_len >= 3, "need at least three source nodes");
        let last = source_len - 1;
        let taps = targets
            .iter()
            .map(|&y| {
                let pos = ((y - x0) / dx).clamp(0.0, last as f64);
                let mut i = pos.floor() as usize;
                if i >= last {
                    i = last - 1;
                }
                let s = pos - i as f64;
                let (s2, s3) = (s * s, s * s * s);
                let w = [
                    0.5 * (-s3 + 2.0 * s2 - s),
                    0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
                    0.5 * (-3.0 * s3 + 4.0 * s2 + s),
                    0.5 * (s3 - s2),
                ];
                let mut t = [(i, w[1]), (i + 1, w[2]), (0, 0.0), (0, 0.0)];
                t[2] = if i == 0 { (0, 0.0) } else { (i - 1, w[0]) };
                t[3] = if i + 2 > last { (0, 0.0) } else { (i + 2, w[3]) };
                // fold ghost nodes into their linear extrapolation
                if i == 0 {
                    t[0].1 += 2.0 * w[0];
                    t[1].1 -= w[0];
                }
                if i + 2 > last {
                    t[1].1 += 2.0 * w[3];
                    t[0].1 -= w[3];
                }
                t
            })
            .collect();
        Self { taps, source_len }
    }

    pub fn apply(&self, src: &[f64], dst: &mut [f64]) {
        assert_eq!(src.len(), self.source_len);
        assert_eq!(dst.len(), self.taps.len());
        for (out, taps) in dst.iter_mut().zip(&self.taps) {
            *out = taps.iter().map(|(j, w)| w * src[*j]).sum();
        }
    }
}
