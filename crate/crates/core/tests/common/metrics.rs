//! Scalar-loop reference metrics.

/// Reference values over the included pixels of `h × w` planes.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// `None` when the images agree exactly.
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub n: usize,
}

/// PSNR peak and SSIM range are the largest included truth value (1 if that is not
/// positive); SSIM averages non-overlapping 8×8 tiles, clipped at the border, over
/// tiles that hold at least one included pixel. Constants are k1 = 0.01, k2 = 0.03.
pub fn reference(pred: &[f64], truth: &[f64], include: &[bool], h: usize, w: usize) -> Reference {
    let mut n = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut peak = f64::NEG_INFINITY;
    for i in 0..h * w {
        if include[i] {
            n += 1;
            abs_sum += (pred[i] - truth[i]).abs();
            sq_sum += (pred[i] - truth[i]) * (pred[i] - truth[i]);
            if truth[i] > peak {
                peak = truth[i];
            }
        }
    }
    if !(peak > 0.0) {
        peak = 1.0;
    }
    let mse = sq_sum / n as f64;
    let psnr = if mse == 0.0 { None } else { Some(10.0 * (peak * peak / mse).log10()) };

    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    let mut tiles = 0;
    let mut ty = 0;
    while ty < h {
        let mut tx = 0;
        while tx < w {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for y in ty..(ty + 8).min(h) {
                for x in tx..(tx + 8).min(w) {
                    if include[y * w + x] {
                        xs.push(pred[y * w + x]);
                        ys.push(truth[y * w + x]);
                    }
                }
            }
            if !xs.is_empty() {
                let m = xs.len() as f64;
                let mut mx = 0.0;
                let mut my = 0.0;
                for k in 0..xs.len() {
                    mx += xs[k];
                    my += ys[k];
                }
                mx /= m;
                my /= m;
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for k in 0..xs.len() {
                    vx += (xs[k] - mx) * (xs[k] - mx);
                    vy += (ys[k] - my) * (ys[k] - my);
                    cxy += (xs[k] - mx) * (ys[k] - my);
                }
                vx /= m;
                vy /= m;
                cxy /= m;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                tiles += 1;
            }
            tx += 8;
        }
        ty += 8;
    }
    Reference { mae: abs_sum / n as f64, mse, rmse: mse.sqrt(), psnr, ssim: total / tiles as f64, n }
}
