use rand::Rng;

use super::graph::{Graph, Op, Var};
use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::{Error, Result};

impl Graph {
    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn new_value(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op produced a consistent shape")
    }

    /// 2D cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k`
    /// kernel plus a per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (is, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if is.len() != 3 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::dim(format!(
                "conv2d expects input [C,H,W], kernel [O,C,k,k], bias [O]; got {is:?}, {ks:?}, {bs:?}"
            )));
        }
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c_in {
            return Err(Error::dim(format!(
                "conv2d input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if kh != kw {
            return Err(Error::dim(format!("conv2d kernel must be square, got {kh}×{kw}")));
        }
        if bs[0] != c_out {
            return Err(Error::dim(format!(
                "conv2d bias has {} entries for {c_out} output channels",
                bs[0]
            )));
        }
        let geom = ConvGeom::new(c_in, h, w, kh, stride, pad).ok_or_else(|| {
            Error::dim(format!(
                "conv2d kernel {kh} with pad {pad}, stride {stride} does not fit {h}×{w}"
            ))
        })?;
        let cols = kernels::im2col(&geom, self.data(input));
        let p = geom.out_len();
        let mut out = Vec::with_capacity(c_out * p);
        for &b in self.data(bias) {
            out.extend(std::iter::repeat_n(b, p));
        }
        kernels::gemm(c_out, geom.patch_len(), p, self.data(kernel), false, &cols, false, 1.0, &mut out);
        let rg = self.any_grad(&[input, kernel, bias]);
        let cols = if self.requires_grad(kernel) { cols } else { Vec::new() };
        let value = Self::new_value(&[c_out, geom.out_h, geom.out_w], out);
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        )
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 3 {
            return Err(Error::dim(format!("maxpool2d expects [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if window == 0 || stride == 0 {
            return Err(Error::contract("maxpool2d window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::dim(format!(
                "maxpool2d window {window} exceeds spatial extent {h}×{w}"
            )));
        }
        let (out, argmax, oh, ow) = kernels::maxpool(self.data(input), c, h, w, window, stride);
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&[c, oh, ow], out), Op::MaxPool { input, argmax }, rg)
    }

    /// `weight · input + bias` for a rank-1 input.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (is, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if is.len() != 1 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::dim(format!(
                "linear expects input [D_in], weight [D_out,D_in], bias [D_out]; got {is:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[1] != is[0] || ws[0] != bs[0] {
            return Err(Error::dim(format!(
                "linear weight {ws:?} incompatible with input {is:?} and bias {bs:?}"
            )));
        }
        let d_out = ws[0];
        let out = kernels::affine(self.data(weight), self.data(input), self.data(bias));
        let rg = self.any_grad(&[input, weight, bias]);
        self.push(Self::new_value(&[d_out], out), Op::Linear { input, weight, bias }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::Relu { input }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::Sigmoid { input }, rg)
    }

    /// Concatenates along the leading (channel) axis. Rank-1 inputs are
    /// joined end to end; higher ranks need equal trailing extents.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat_channels of an empty list"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_channels: spatial extents {:?} and {:?} differ",
                    &s[1..],
                    tail
                )));
            }
            channels += s[0];
        }
        let mut out = Vec::with_capacity(channels * tail.iter().product::<usize>());
        for &v in inputs {
            out.extend_from_slice(self.data(v));
        }
        let mut shape = vec![channels];
        shape.extend(tail);
        let rg = self.any_grad(inputs);
        self.push(
            Self::new_value(&shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Splits along the channel axis into consecutive blocks of `sizes`.
    pub fn split_channels(&mut self, input: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(input).to_vec();
        if sizes.iter().sum::<usize>() != shape[0] || sizes.contains(&0) {
            return Err(Error::dim(format!(
                "split_channels sizes {sizes:?} do not partition {} channels",
                shape[0]
            )));
        }
        let plane: usize = shape[1..].iter().product();
        let rg = self.requires_grad(input);
        let mut offset = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &c in sizes {
            let len = c * plane;
            let data = self.data(input)[offset..offset + len].to_vec();
            let mut s = shape.clone();
            s[0] = c;
            parts.push(self.push(Self::new_value(&s, data), Op::Narrow { input, offset }, rg)?);
            offset += len;
        }
        Ok(parts)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let rg = self.requires_grad(input);
        self.push(value, Op::Reshape { input }, rg)
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).numel();
        if self.shape(input).len() == 1 {
            return Ok(input);
        }
        self.reshape(input, &[n])
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, this is the
    /// identity and returns `input` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(input).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.data(input).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::Dropout { input, mask }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.data(a), self.data(b));
        let (shape, out): (Vec<usize>, Vec<f64>) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else if db.len() == 1 {
            (sa, da.iter().map(|&x| f(x, db[0])).collect())
        } else if da.len() == 1 {
            (sb, db.iter().map(|&y| f(da[0], y)).collect())
        } else {
            return Err(Error::dim(format!("{name}: shapes {sa:?} and {sb:?} differ")));
        };
        Ok((Self::new_value(&shape, out), self.any_grad(&[a, b])))
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(v, Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let out = self.data(input).iter().map(|x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::Scale { input, factor }, rg)
    }

    pub fn neg(&mut self, input: Var) -> Result<Var> {
        self.scale(input, -1.0)
    }

    pub fn add_const(&mut self, input: Var, c: f64) -> Result<Var> {
        let out = self.data(input).iter().map(|x| x + c).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::AddConst { input }, rg)
    }

    pub fn powi(&mut self, input: Var, exp: i32) -> Result<Var> {
        let out = self.data(input).iter().map(|x| x.powi(exp)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Self::new_value(&shape, out), Op::Powi { input, exp }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.data(input).iter().sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn sum_squares(&mut self, input: Var) -> Result<Var> {
        let s = self.data(input).iter().map(|x| x * x).sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(s), Op::SumSquares { input }, rg)
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.value(d).numel() as f64;
        let s = self.sum_squares(d)?;
        self.scale(s, 1.0 / n)
    }

    /// `(1 − w)·cat + w·z` for a one-element weight `w`.
    ///
    /// The endpoints are exact: `w = 0` reproduces `cat` and `w = 1`
    /// reproduces `z` bit for bit.
    pub fn mix(&mut self, cat: Var, z: Var, w: Var) -> Result<Var> {
        if self.shape(cat) != self.shape(z) {
            return Err(Error::dim(format!(
                "mix: concatenated data features {:?} and fusion features {:?} differ",
                self.shape(cat),
                self.shape(z)
            )));
        }
        if self.value(w).numel() != 1 {
            return Err(Error::dim("mix: weight must be a single value"));
        }
        let wv = self.data(w)[0];
        let out = self
            .data(cat)
            .iter()
            .zip(self.data(z))
            .map(|(&c, &zv)| (1.0 - wv) * c + wv * zv)
            .collect();
        let shape = self.shape(cat).to_vec();
        let rg = self.any_grad(&[cat, z, w]);
        self.push(Self::new_value(&shape, out), Op::Mix { cat, z, w }, rg)
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
