//! Class-specific convolution.
//!
//! Every output pixel `(m, n)` is filtered with the weight stack `W_i` of its
//! class `i = H(m, n)`:
//!
//! ```text
//! out(m, n, c) = b_i(c) + sum_{s, t, c'} Q(m + s, n + t, c') * W_i(c, c', s, t)
//! ```
//!
//! with zero padding, exactly like an ordinary convolution whose kernel is
//! looked up per pixel. Per pixel, taps are accumulated in the same
//! `(c_in, ky, kx)` order as [`crate::nn::conv2d`], so a bank whose stacks
//! are all equal reproduces the plain convolution value for value.

use std::rc::Rc;

use crate::autograd::{BackwardOp, Graph, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::ConvWeights;
use crate::tensor::{Shape, Tensor};

/// Per-pixel class indices in `1..=num_classes`, one `(H, W)` plane per
/// batch item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    batch: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    indices: Vec<u32>,
}

impl ClassMap {
    /// A single-image map. Fails if any entry falls outside `1..=num_classes`.
    pub fn new(height: usize, width: usize, num_classes: usize, indices: Vec<u32>) -> Result<Self> {
        Self::batched(1, height, width, num_classes, indices)
    }

    pub fn batched(batch: usize, height: usize, width: usize, num_classes: usize, indices: Vec<u32>) -> Result<Self> {
        if num_classes == 0 {
            return config_err("class map needs at least one class");
        }
        if indices.len() != batch * height * width {
            return shape_err(format!(
                "class map of {batch}x{height}x{width} got {} indices",
                indices.len()
            ));
        }
        let map = ClassMap {
            batch,
            height,
            width,
            num_classes,
            indices,
        };
        map.check_range(num_classes)?;
        Ok(map)
    }

    pub fn uniform(height: usize, width: usize, num_classes: usize, class: u32) -> Result<Self> {
        Self::new(height, width, num_classes, vec![class; height * width])
    }

    /// Stacks single-image maps along the batch axis.
    pub fn stack(maps: &[ClassMap]) -> Result<Self> {
        let Some(first) = maps.first() else {
            return shape_err("cannot stack zero class maps");
        };
        let mut indices = Vec::with_capacity(maps.len() * first.height * first.width * first.batch);
        let mut batch = 0;
        for m in maps {
            if m.height != first.height || m.width != first.width || m.num_classes != first.num_classes {
                return shape_err("stacked class maps differ in extent or class count");
            }
            indices.extend_from_slice(&m.indices);
            batch += m.batch;
        }
        Self::batched(batch, first.height, first.width, first.num_classes, indices)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u32 {
        self.indices[(n * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, class: u32) -> Result<()> {
        if class == 0 || class as usize > self.num_classes {
            return Err(Error::Dispatch {
                class,
                y,
                x,
                num_classes: self.num_classes,
            });
        }
        self.indices[(n * self.height + y) * self.width + x] = class;
        Ok(())
    }

    /// Fails with a dispatch error if any entry is outside `1..=m`.
    pub fn check_range(&self, m: usize) -> Result<()> {
        let plane = self.height * self.width;
        match self.indices.iter().position(|&c| c == 0 || c as usize > m) {
            None => Ok(()),
            Some(p) => Err(Error::Dispatch {
                class: self.indices[p],
                y: (p % plane) / self.width,
                x: p % self.width,
                num_classes: m,
            }),
        }
    }

    /// Occurrence count of each class, index 0 for class 1.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &c in &self.indices {
            h[c as usize - 1] += 1;
        }
        h
    }
}

/// `M` weight stacks of shape `(C_out, C_in, K, K)`, stored contiguously,
/// plus optional per-class biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub num_classes: usize,
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub biases: Option<Vec<f64>>,
}

impl FilterBank {
    pub fn new(
        num_classes: usize,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        weights: Vec<f64>,
        biases: Option<Vec<f64>>,
    ) -> Result<Self> {
        if num_classes == 0 || c_out == 0 || c_in == 0 {
            return config_err("filter bank extents must be positive");
        }
        if kernel.is_multiple_of(2) {
            return config_err(format!("kernel size {kernel} must be odd"));
        }
        if weights.len() != num_classes * c_out * c_in * kernel * kernel {
            return shape_err(format!(
                "filter bank weights: {} values for {num_classes} x ({c_out}, {c_in}, {kernel}, {kernel})",
                weights.len()
            ));
        }
        if let Some(b) = &biases {
            if b.len() != num_classes * c_out {
                return shape_err(format!("filter bank biases: {} values for {num_classes} x {c_out}", b.len()));
            }
        }
        Ok(FilterBank {
            num_classes,
            c_out,
            c_in,
            kernel,
            weights,
            biases,
        })
    }

    pub fn zeros(num_classes: usize, c_out: usize, c_in: usize, kernel: usize, with_bias: bool) -> Self {
        FilterBank {
            num_classes,
            c_out,
            c_in,
            kernel,
            weights: vec![0.0; num_classes * c_out * c_in * kernel * kernel],
            biases: with_bias.then(|| vec![0.0; num_classes * c_out]),
        }
    }

    /// Every class gets a copy of one dense (`groups == 1`) convolution.
    pub fn from_shared(conv: &ConvWeights, num_classes: usize) -> Result<Self> {
        if conv.groups != 1 {
            return config_err("filter banks hold dense kernels (groups = 1)");
        }
        let ks = conv.kernel.shape();
        let weights = conv.kernel.values().repeat(num_classes);
        let biases = conv.bias.as_ref().map(|b| b.values().repeat(num_classes));
        Self::new(num_classes, ks.n(), ks.c(), ks.h(), weights, biases)
    }

    fn stack_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    /// Weights of class `class` (1-based).
    pub fn stack(&self, class: usize) -> &[f64] {
        let l = self.stack_len();
        &self.weights[(class - 1) * l..class * l]
    }

    pub fn stack_mut(&mut self, class: usize) -> &mut [f64] {
        let l = self.stack_len();
        &mut self.weights[(class - 1) * l..class * l]
    }

    /// Class `class` (1-based) as an ordinary convolution.
    pub fn as_conv(&self, class: usize) -> ConvWeights {
        let kernel = Tensor::from_vec(
            Shape::new(self.c_out, self.c_in, self.kernel, self.kernel),
            self.stack(class).to_vec(),
        )
        .expect("stack shape");
        let bias = self.biases.as_ref().map(|b| {
            Tensor::from_vec(
                Shape::new(1, self.c_out, 1, 1),
                b[(class - 1) * self.c_out..class * self.c_out].to_vec(),
            )
            .expect("bias shape")
        });
        ConvWeights {
            kernel,
            bias,
            groups: 1,
        }
    }

    /// Parameter tensors: weights `(M * C_out, C_in, K, K)`, biases `(1, M * C_out, 1, 1)`.
    pub fn to_tensors(&self) -> (Tensor, Option<Tensor>) {
        let w = Tensor::from_vec(
            Shape::new(self.num_classes * self.c_out, self.c_in, self.kernel, self.kernel),
            self.weights.clone(),
        )
        .expect("bank shape");
        let b = self.biases.as_ref().map(|b| {
            Tensor::from_vec(Shape::new(1, self.num_classes * self.c_out, 1, 1), b.clone()).expect("bias shape")
        });
        (w, b)
    }
}

#[derive(Debug, Clone, Copy)]
struct CsGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl CsGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Copies the `(c_in, ky, kx)` neighbourhood of pixel `(y, x)` into `patch`,
/// with zeros where it leaves the image.
fn gather_patch(q: &[f64], g: CsGeom, n: usize, y: usize, x: usize, patch: &mut [f64]) {
    let r = (g.k / 2) as isize;
    let plane = g.h * g.w;
    let mut j = 0;
    for ci in 0..g.cin {
        let base = (n * g.cin + ci) * plane;
        for ky in 0..g.k {
            let yy = y as isize + ky as isize - r;
            for kx in 0..g.k {
                let xx = x as isize + kx as isize - r;
                patch[j] = if yy >= 0 && xx >= 0 && (yy as usize) < g.h && (xx as usize) < g.w {
                    q[base + yy as usize * g.w + xx as usize]
                } else {
                    0.0
                };
                j += 1;
            }
        }
    }
}

/// Adds `patch` back into the neighbourhood of `(y, x)`, dropping padding taps.
fn scatter_patch(dst: &mut [f64], g: CsGeom, n: usize, y: usize, x: usize, patch: &[f64]) {
    let r = (g.k / 2) as isize;
    let plane = g.h * g.w;
    let mut j = 0;
    for ci in 0..g.cin {
        let base = (n * g.cin + ci) * plane;
        for ky in 0..g.k {
            let yy = y as isize + ky as isize - r;
            for kx in 0..g.k {
                let xx = x as isize + kx as isize - r;
                if yy >= 0 && xx >= 0 && (yy as usize) < g.h && (xx as usize) < g.w {
                    dst[base + yy as usize * g.w + xx as usize] += patch[j];
                }
                j += 1;
            }
        }
    }
}

fn cs_forward(q: &[f64], g: CsGeom, classes: &[u32], weights: &[f64], biases: Option<&[f64]>) -> Vec<f64> {
    let plane = g.h * g.w;
    let pl = g.patch_len();
    let mut out = vec![0.0; g.n * g.cout * plane];
    let mut patch = vec![0.0; pl];
    for n in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let class = classes[(n * g.h + y) * g.w + x] as usize - 1;
                gather_patch(q, g, n, y, x, &mut patch);
                for co in 0..g.cout {
                    let row = &weights[(class * g.cout + co) * pl..][..pl];
                    let start = biases.map_or(0.0, |b| b[class * g.cout + co]);
                    let v = row.iter().zip(&patch).fold(start, |acc, (w, p)| acc + w * p);
                    out[(n * g.cout + co) * plane + y * g.w + x] = v;
                }
            }
        }
    }
    out
}

struct CsGrads {
    q: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    biases: Option<Vec<f64>>,
}

fn cs_backward(
    grad: &[f64],
    q: &[f64],
    g: CsGeom,
    classes: &[u32],
    num_classes: usize,
    weights: &[f64],
    want: [bool; 3],
) -> CsGrads {
    let plane = g.h * g.w;
    let pl = g.patch_len();
    let mut gq = want[0].then(|| vec![0.0; q.len()]);
    let mut gw = want[1].then(|| vec![0.0; weights.len()]);
    let mut gb = want[2].then(|| vec![0.0; num_classes * g.cout]);
    let mut patch = vec![0.0; pl];
    let mut col = vec![0.0; pl];
    let mut gout = vec![0.0; g.cout];
    for n in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let class = classes[(n * g.h + y) * g.w + x] as usize - 1;
                for (co, v) in gout.iter_mut().enumerate() {
                    *v = grad[(n * g.cout + co) * plane + y * g.w + x];
                }
                if let Some(gq) = gq.as_mut() {
                    col.fill(0.0);
                    for (co, &go) in gout.iter().enumerate() {
                        let row = &weights[(class * g.cout + co) * pl..][..pl];
                        for (c, w) in col.iter_mut().zip(row) {
                            *c += w * go;
                        }
                    }
                    scatter_patch(gq, g, n, y, x, &col);
                }
                if let Some(gw) = gw.as_mut() {
                    gather_patch(q, g, n, y, x, &mut patch);
                    for (co, &go) in gout.iter().enumerate() {
                        let row = &mut gw[(class * g.cout + co) * pl..][..pl];
                        for (w, p) in row.iter_mut().zip(&patch) {
                            *w += go * p;
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for (co, &go) in gout.iter().enumerate() {
                        gb[class * g.cout + co] += go;
                    }
                }
            }
        }
    }
    CsGrads {
        q: gq,
        weights: gw,
        biases: gb,
    }
}

fn cs_geom(q: Shape, classes: &ClassMap, num_classes: usize, c_out: usize, c_in: usize, k: usize) -> Result<CsGeom> {
    if q.c() != c_in {
        return shape_err(format!("csconv expects {c_in} input channels, got {}", q.c()));
    }
    if classes.batch() != q.n() || classes.height() != q.h() || classes.width() != q.w() {
        return shape_err(format!(
            "class map {}x{}x{} does not match feature map {q}",
            classes.batch(),
            classes.height(),
            classes.width()
        ));
    }
    classes.check_range(num_classes)?;
    Ok(CsGeom {
        n: q.n(),
        cin: c_in,
        cout: c_out,
        h: q.h(),
        w: q.w(),
        k,
    })
}

/// Class-specific convolution of `q` outside any graph.
pub fn csconv_forward(q: &Tensor, classes: &ClassMap, bank: &FilterBank) -> Result<Tensor> {
    let g = cs_geom(q.shape(), classes, bank.num_classes, bank.c_out, bank.c_in, bank.kernel)?;
    let out = cs_forward(q.values(), g, classes.indices(), &bank.weights, bank.biases.as_deref());
    Tensor::from_vec(Shape::new(g.n, g.cout, g.h, g.w), out)
}

/// Adjoint of [`csconv_forward`]: the gradient w.r.t. `q` and a bank-shaped
/// gradient in which classes absent from `classes` are exactly zero.
pub fn csconv_backward(grad_out: &Tensor, q: &Tensor, classes: &ClassMap, bank: &FilterBank) -> Result<(Tensor, FilterBank)> {
    let g = cs_geom(q.shape(), classes, bank.num_classes, bank.c_out, bank.c_in, bank.kernel)?;
    let expect = Shape::new(g.n, g.cout, g.h, g.w);
    if grad_out.shape() != expect {
        return shape_err(format!("grad_out {} does not match output {expect}", grad_out.shape()));
    }
    let grads = cs_backward(
        grad_out.values(),
        q.values(),
        g,
        classes.indices(),
        bank.num_classes,
        &bank.weights,
        [true, true, bank.biases.is_some()],
    );
    let gq = Tensor::from_vec(q.shape(), grads.q.expect("requested"))?;
    let gbank = FilterBank {
        weights: grads.weights.expect("requested"),
        biases: grads.biases,
        ..bank.clone()
    };
    Ok((gq, gbank))
}

struct CsConvOp {
    geom: CsGeom,
    classes: Rc<ClassMap>,
    num_classes: usize,
    has_bias: bool,
}

impl BackwardOp for CsConvOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let want = [needs[0], needs[1], self.has_bias && needs[2]];
        let grads = cs_backward(
            grad,
            inputs[0].values(),
            self.geom,
            self.classes.indices(),
            self.num_classes,
            inputs[1].values(),
            want,
        );
        let mut out = vec![grads.q, grads.weights];
        if self.has_bias {
            out.push(grads.biases);
        }
        out
    }
}

impl Graph {
    /// Class-specific convolution. `weight` is the bank as one
    /// `(M * C_out, C_in, K, K)` tensor, `bias` the `M * C_out` class biases.
    pub fn csconv(&mut self, q: Var, classes: Rc<ClassMap>, weight: Var, bias: Option<Var>, num_classes: usize) -> Result<Var> {
        let ws = self.shape(weight);
        if num_classes == 0 || !ws.n().is_multiple_of(num_classes) {
            return config_err(format!("bank of {} rows is not a multiple of {num_classes} classes", ws.n()));
        }
        if ws.h() != ws.w() || ws.h().is_multiple_of(2) {
            return config_err(format!("bank kernels must be square and odd, got {ws}"));
        }
        let c_out = ws.n() / num_classes;
        let geom = cs_geom(self.shape(q), &classes, num_classes, c_out, ws.c(), ws.h())?;
        if let Some(b) = bias {
            if self.shape(b).numel() != num_classes * c_out {
                return shape_err(format!("bank bias {} for {num_classes} x {c_out}", self.shape(b)));
            }
        }
        let out = cs_forward(
            self.value(q),
            geom,
            classes.indices(),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let shape = Shape::new(geom.n, geom.cout, geom.h, geom.w);
        let mut inputs = vec![q, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            Tensor::from_vec(shape, out)?,
            inputs,
            CsConvOp {
                geom,
                classes,
                num_classes,
                has_bias: bias.is_some(),
            },
        ))
    }
}
