//! Single-precision U-Net forward pass.
//!
//! Every output value starts from its bias and accumulates input channels in
//! ascending order, each over kernel rows then kernel columns, so results are
//! bit-reproducible for fixed weights and input.

use rayon::prelude::*;

use super::weights::{Tensor, UNetWeights};
use super::SurrogateError;

/// Channel-major feature map `[channels][side][side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, side: usize) -> Self {
        Self { channels, side, data: vec![0.0; channels * side * side] }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Raw network output: `n_c − 1` planes per input tile.
pub type SurrogateOutput = FeatureMap;

fn conv3x3(input: &FeatureMap, w: &Tensor, b: &Tensor, relu: bool) -> FeatureMap {
    let (cout, cin, s) = (w.dims[0], w.dims[1], input.side);
    assert_eq!(cin, input.channels, "conv input channels");
    let mut out = FeatureMap::zeros(cout, s);
    out.data.par_chunks_mut(s * s).enumerate().for_each(|(o, plane)| {
        plane.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..cin {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w.data[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in 0..s {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= s as isize {
                            continue;
                        }
                        let row = &src[iy as usize * s..(iy as usize + 1) * s];
                        let dst = &mut plane[y * s..(y + 1) * s];
                        let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { s - 1 } else { s });
                        for x in x0..x1 {
                            dst[x] += wv * row[x + kx - 1];
                        }
                    }
                }
            }
        }
        if relu {
            plane.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    });
    out
}

/// Stride-2 transposed convolution, padding 1, output padding 1: input cell
/// `(iy, ix)` scatters into output `(2·iy − 1 + ky, 2·ix − 1 + kx)`.
fn conv_transpose(input: &FeatureMap, w: &Tensor, b: &Tensor) -> FeatureMap {
    let (cout, cin, s) = (w.dims[0], w.dims[1], input.side);
    assert_eq!(cin, input.channels, "transposed conv input channels");
    let so = 2 * s;
    let mut out = FeatureMap::zeros(cout, so);
    out.data.par_chunks_mut(so * so).enumerate().for_each(|(o, plane)| {
        plane.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..cin {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w.data[((o * cin + i) * 3 + ky) * 3 + kx];
                    for iy in 0..s {
                        let y = 2 * iy + ky;
                        if y == 0 || y > so {
                            continue;
                        }
                        for ix in 0..s {
                            let x = 2 * ix + kx;
                            if x == 0 || x > so {
                                continue;
                            }
                            plane[(y - 1) * so + x - 1] += wv * src[iy * s + ix];
                        }
                    }
                }
            }
        }
    });
    out
}

fn max_pool(input: &FeatureMap) -> FeatureMap {
    let (s, h) = (input.side, input.side / 2);
    let mut out = FeatureMap::zeros(input.channels, h);
    for c in 0..input.channels {
        let src = input.plane(c);
        for y in 0..h {
            for x in 0..h {
                let a = src[2 * y * s + 2 * x].max(src[2 * y * s + 2 * x + 1]);
                let b = src[(2 * y + 1) * s + 2 * x].max(src[(2 * y + 1) * s + 2 * x + 1]);
                out.data[(c * h + y) * h + x] = a.max(b);
            }
        }
    }
    out
}

fn concat(first: &FeatureMap, second: &FeatureMap) -> FeatureMap {
    assert_eq!(first.side, second.side, "skip connection sizes differ");
    let mut data = first.data.clone();
    data.extend_from_slice(&second.data);
    FeatureMap { channels: first.channels + second.channels, side: first.side, data }
}

fn classifier(input: &FeatureMap, w: &Tensor, b: &Tensor) -> FeatureMap {
    let (cout, cin, n) = (w.dims[0], w.dims[1], input.side * input.side);
    let mut out = FeatureMap::zeros(cout, input.side);
    for o in 0..cout {
        let plane = &mut out.data[o * n..(o + 1) * n];
        plane.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..cin {
            let wv = w.data[o * cin + i];
            for (d, s) in plane.iter_mut().zip(input.plane(i)) {
                *d += wv * s;
            }
        }
    }
    out
}

/// Runs the network on one `in_channels × side × side` input (channel-major).
pub fn unet_forward(weights: &UNetWeights, input: &[f32]) -> Result<SurrogateOutput, SurrogateError> {
    let arch = *weights.architecture();
    let s = arch.input_side;
    if input.len() != arch.in_channels * s * s {
        return Err(SurrogateError::InputShape { expected: arch.in_channels * s * s, got: input.len() });
    }
    let layer = |name: &str, x: &FeatureMap| {
        conv3x3(x, weights.tensor(&format!("{name}.weight")), weights.tensor(&format!("{name}.bias")), true)
    };
    let mut x = FeatureMap { channels: arch.in_channels, side: s, data: input.to_vec() };
    let mut skips = Vec::with_capacity(arch.levels);
    for l in 1..=arch.levels {
        x = layer(&format!("enc{l}.conv1"), &x);
        x = layer(&format!("enc{l}.conv2"), &x);
        let pooled = max_pool(&x);
        skips.push(x);
        x = pooled;
    }
    x = layer("bottleneck.conv1", &x);
    x = layer("bottleneck.conv2", &x);
    for l in (1..=arch.levels).rev() {
        let up = conv_transpose(&x, weights.tensor(&format!("dec{l}.up.weight")), weights.tensor(&format!("dec{l}.up.bias")));
        let skip = skips.pop().expect("one skip per level");
        x = concat(&up, &skip);
        x = layer(&format!("dec{l}.conv1"), &x);
        x = layer(&format!("dec{l}.conv2"), &x);
    }
    Ok(classifier(&x, weights.tensor("classifier.weight"), weights.tensor("classifier.bias")))
}
