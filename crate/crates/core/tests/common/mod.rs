//! Shared helpers for the integration suites: a literal nested-loop oracle
//! for the involution operator, written independently of the library's
//! implementation (per-pixel index arithmetic, no padding buffers, no
//! flattened views), plus the standard synthetic-data pipeline.

use ivcn::data::{generate_synthetic, prepare_dataset, AugmentMode, AugmentSpec, Dataset, SyntheticSpec};
use ivcn::involution::{InvolutionSpec, InvolutionWeights};
use ivcn::layers::Mode;
use ivcn::rng::{streams, Rng};
use ivcn::tensor::Tensor;

/// Kernel generation and application evaluated literally, pixel by pixel:
/// the kernel at (n,i,j) comes from that pixel's channel vector through
/// reduce -> batch norm -> relu -> expand, and the output sums the kernel
/// against the K x K neighborhood with zeros outside the image. Returns
/// (y, kernels) with kernels indexed [n][i][j][t * G + g].
#[allow(clippy::needless_range_loop)]
pub fn oracle_inv_forward(
    x: &Tensor,
    w: &InvolutionWeights,
    spec: &InvolutionSpec,
    mode: Mode,
) -> (Tensor, Tensor) {
    let n = x.shape()[0];
    let h = x.shape()[1];
    let wid = x.shape()[2];
    let c = spec.channels;
    let r = spec.reduced_channels();
    let k = spec.kernel_size;
    let g = spec.groups;
    let q = k * k * g;
    let half = (k / 2) as isize;

    // Reduce map at every pixel.
    let mut z0 = vec![vec![0.0f64; r]; n * h * wid];
    for b in 0..n {
        for i in 0..h {
            for j in 0..wid {
                for rr in 0..r {
                    let mut acc = w.bias0.data()[rr];
                    for cc in 0..c {
                        acc += w.w0.data()[rr * c + cc] * x.at4(b, i, j, cc);
                    }
                    z0[(b * h + i) * wid + j][rr] = acc;
                }
            }
        }
    }

    // Batch normalization: batch statistics in train mode, running in infer.
    let count = (n * h * wid) as f64;
    let mut mean = vec![0.0f64; r];
    let mut var = vec![0.0f64; r];
    match mode {
        Mode::Train => {
            for pix in z0.iter() {
                for rr in 0..r {
                    mean[rr] += pix[rr];
                }
            }
            for rr in 0..r {
                mean[rr] /= count;
            }
            for pix in z0.iter() {
                for rr in 0..r {
                    var[rr] += (pix[rr] - mean[rr]) * (pix[rr] - mean[rr]);
                }
            }
            for rr in 0..r {
                var[rr] /= count;
            }
        }
        Mode::Infer => {
            for rr in 0..r {
                mean[rr] = w.bn.running_mean.data()[rr];
                var[rr] = w.bn.running_var.data()[rr];
            }
        }
    }

    // Per-pixel kernel vector, then the neighborhood sum.
    let mut kernels = Tensor::zeros(&[n, h, wid, q]).unwrap();
    let mut y = Tensor::zeros(&[n, h, wid, c]).unwrap();
    for b in 0..n {
        for i in 0..h {
            for j in 0..wid {
                let pix = &z0[(b * h + i) * wid + j];
                let mut kern = vec![0.0f64; q];
                for qq in 0..q {
                    let mut acc = w.bias1.data()[qq];
                    for rr in 0..r {
                        let xhat = (pix[rr] - mean[rr]) / (var[rr] + w.bn.epsilon).sqrt();
                        let z1 = w.bn.gamma.data()[rr] * xhat + w.bn.beta.data()[rr];
                        let z2 = if z1 > 0.0 { z1 } else { 0.0 };
                        acc += w.w1.data()[qq * r + rr] * z2;
                    }
                    kern[qq] = acc;
                    kernels.set4(b, i, j, qq, acc);
                }
                for cc in 0..c {
                    let group = cc * g / c;
                    let mut acc = 0.0;
                    for u in -half..=half {
                        for v in -half..=half {
                            let (si, sj) = (i as isize + u, j as isize + v);
                            if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < wid {
                                let t = ((u + half) * k as isize + (v + half)) as usize;
                                acc += kern[t * g + group] * x.at4(b, si as usize, sj as usize, cc);
                            }
                        }
                    }
                    y.set4(b, i, j, cc, acc);
                }
            }
        }
    }
    (y, kernels)
}

/// Random involution weights whose BN running statistics are also
/// randomized, so infer-mode checks exercise a non-identity normalization.
pub fn random_weights(spec: &InvolutionSpec, seed: u64) -> InvolutionWeights {
    let mut rng = Rng::new(seed);
    let mut w = InvolutionWeights::init(spec, &mut rng).unwrap();
    for t in [&mut w.bias0, &mut w.bias1, &mut w.bn.beta] {
        for v in t.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    for v in w.bn.running_mean.data_mut() {
        *v = rng.uniform(-0.5, 0.5);
    }
    for v in w.bn.running_var.data_mut() {
        *v = rng.uniform(0.25, 2.0);
    }
    w
}

/// The experiment pipeline the CLI uses: seeded synthetic data, 80:10:10
/// split, train-split x4 augmentation.
pub fn synthetic_pipeline(per_class: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        per_class,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec, &mut Rng::with_stream(seed, streams::SYNTH));
    prepare_dataset(ds, AugmentMode::On, &AugmentSpec::default(), seed).unwrap()
}

/// Max absolute elementwise difference.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
