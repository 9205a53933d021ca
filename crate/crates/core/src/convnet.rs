//! The feature generator: stages of complex-valued valid convolution (summed
//! over input images), pixelwise modulus, and 2×2 average pooling, preceded by
//! scalar mean subtraction and followed by flattening with an appended
//! standard-deviation feature.
//!
//! Every stage's *inputs* are real — raw centered pixels for stage one,
//! modulus/pool outputs afterwards — so the training path uses real-by-complex
//! convolution kernels throughout ([`real_conv_valid`]); the general
//! complex-by-complex operation ([`complex_conv_valid`]) is the reference the
//! fast path is tested against.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::{real, Real};
use crate::tensor::{ComplexImage, Image, Tensor};

/// One convolution-modulus-pool stage: `output_images` complex valid
/// convolutions over `input_images` inputs with square `kernel_size` kernels,
/// then modulus and 2×2 average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStageSpec {
    pub input_images: usize,
    pub output_images: usize,
    pub kernel_size: usize,
    pub input_size: usize,
    pub output_size: usize,
}

impl ConvStageSpec {
    /// `output_size` is derived: valid convolution shrinks each extent to
    /// `input_size - kernel_size + 1`, which must be even so the 2×2 pooling
    /// grid tiles it exactly.
    pub fn new(
        input_images: usize,
        output_images: usize,
        kernel_size: usize,
        input_size: usize,
    ) -> Result<Self> {
        if input_images == 0 || output_images == 0 || kernel_size == 0 {
            return Err(Error::Dimension(
                "stage image counts and kernel size must be positive".into(),
            ));
        }
        if input_size < kernel_size {
            return Err(Error::Dimension(format!(
                "kernel size {kernel_size} exceeds input extent {input_size}"
            )));
        }
        let conv = input_size - kernel_size + 1;
        if conv % 2 != 0 {
            return Err(Error::Dimension(format!(
                "convolved extent {conv} (from input {input_size}, kernel {kernel_size}) \
                 is odd and cannot be 2x2-pooled"
            )));
        }
        Ok(Self {
            input_images,
            output_images,
            kernel_size,
            input_size,
            output_size: conv / 2,
        })
    }

    /// Extent after the valid convolution, before pooling.
    pub fn conv_size(&self) -> usize {
        self.input_size - self.kernel_size + 1
    }
}

/// An ordered chain of stages whose image counts and extents line up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    stages: Vec<ConvStageSpec>,
}

impl ArchitectureSpec {
    pub fn new(stages: Vec<ConvStageSpec>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Dimension(
                "an architecture needs at least one stage".into(),
            ));
        }
        for (s, pair) in stages.windows(2).enumerate() {
            if pair[0].output_images != pair[1].input_images {
                return Err(Error::Dimension(format!(
                    "stage {s} emits {} images but stage {} expects {}",
                    pair[0].output_images,
                    s + 1,
                    pair[1].input_images
                )));
            }
            if pair[0].output_size != pair[1].input_size {
                return Err(Error::Dimension(format!(
                    "stage {s} emits {0}x{0} images but stage {1} expects {2}x{2}",
                    pair[0].output_size,
                    s + 1,
                    pair[1].input_size
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[ConvStageSpec] {
        &self.stages
    }

    /// Channel count the raw input must have.
    pub fn channels(&self) -> usize {
        self.stages[0].input_images
    }

    /// Square pixel extent the raw input must have.
    pub fn input_size(&self) -> usize {
        self.stages[0].input_size
    }

    pub fn final_images(&self) -> usize {
        self.stages.last().unwrap().output_images
    }

    pub fn final_size(&self) -> usize {
        self.stages.last().unwrap().output_size
    }

    /// Length of the feature vector: the flattened final images plus the
    /// standard-deviation feature.
    pub fn feature_len(&self) -> usize {
        self.final_images() * self.final_size() * self.final_size() + 1
    }
}

/// The six named reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    CifarLarger,
    CifarSmaller,
    MnistLarger,
    MnistSmaller,
    ImagenetLarger,
    ImagenetSmaller,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::CifarLarger,
        Preset::CifarSmaller,
        Preset::MnistLarger,
        Preset::MnistSmaller,
        Preset::ImagenetLarger,
        Preset::ImagenetSmaller,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::CifarLarger => "cifar-larger",
            Preset::CifarSmaller => "cifar-smaller",
            Preset::MnistLarger => "mnist-larger",
            Preset::MnistSmaller => "mnist-smaller",
            Preset::ImagenetLarger => "imagenet-larger",
            Preset::ImagenetSmaller => "imagenet-smaller",
        }
    }

    pub fn spec(&self) -> ArchitectureSpec {
        let rows: &[(usize, usize, usize, usize)] = match self {
            Preset::CifarLarger => &[(3, 16, 3, 32), (16, 128, 2, 15), (128, 1024, 2, 7)],
            Preset::MnistLarger => &[(1, 16, 3, 32), (16, 128, 2, 15), (128, 1024, 2, 7)],
            Preset::CifarSmaller => &[(3, 16, 3, 32), (16, 64, 2, 15), (64, 256, 2, 7)],
            Preset::MnistSmaller => &[(1, 16, 3, 32), (16, 64, 2, 15), (64, 256, 2, 7)],
            Preset::ImagenetLarger => &[
                (3, 16, 5, 128),
                (16, 64, 3, 62),
                (64, 256, 3, 30),
                (256, 1024, 3, 14),
            ],
            Preset::ImagenetSmaller => &[
                (3, 16, 5, 128),
                (16, 64, 3, 62),
                (64, 256, 3, 30),
                (256, 256, 3, 14),
            ],
        };
        let stages = rows
            .iter()
            .map(|&(i, o, k, s)| ConvStageSpec::new(i, o, k, s).expect("preset stage"))
            .collect();
        ArchitectureSpec::new(stages).expect("preset chain")
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown architecture preset '{s}'")))
    }
}

/// One stage's kernels, stored kernel-major: output image, then input image,
/// then row-major pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<R: Real> {
    input_images: usize,
    output_images: usize,
    kernel_size: usize,
    data: Vec<Complex<R>>,
}

impl<R: Real> KernelBank<R> {
    pub fn new(
        input_images: usize,
        output_images: usize,
        kernel_size: usize,
        data: Vec<Complex<R>>,
    ) -> Result<Self> {
        if input_images == 0 || output_images == 0 || kernel_size == 0 {
            return Err(Error::Dimension("kernel bank dimensions must be positive".into()));
        }
        if data.len() != input_images * output_images * kernel_size * kernel_size {
            return Err(Error::Dimension(format!(
                "kernel bank needs {} entries, got {}",
                input_images * output_images * kernel_size * kernel_size,
                data.len()
            )));
        }
        Ok(Self {
            input_images,
            output_images,
            kernel_size,
            data,
        })
    }

    fn zeros(input_images: usize, output_images: usize, kernel_size: usize) -> Self {
        let len = input_images * output_images * kernel_size * kernel_size;
        Self {
            input_images,
            output_images,
            kernel_size,
            data: vec![Complex::new(R::zero(), R::zero()); len],
        }
    }

    pub fn input_images(&self) -> usize {
        self.input_images
    }

    pub fn output_images(&self) -> usize {
        self.output_images
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    /// The `kernel_size²` pixels of the kernel mapping input `i` into
    /// output `o`, row-major. Indices are 0-based.
    pub fn kernel(&self, o: usize, i: usize) -> &[Complex<R>] {
        let kk = self.kernel_size * self.kernel_size;
        let base = (o * self.input_images + i) * kk;
        &self.data[base..base + kk]
    }

    fn kernel_mut(&mut self, o: usize, i: usize) -> &mut [Complex<R>] {
        let kk = self.kernel_size * self.kernel_size;
        let base = (o * self.input_images + i) * kk;
        &mut self.data[base..base + kk]
    }

    pub fn data(&self) -> &[Complex<R>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<R>] {
        &mut self.data
    }
}

/// All learned kernels of an architecture; doubles as the container for their
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<R: Real> {
    stages: Vec<KernelBank<R>>,
}

impl<R: Real> ConvParams<R> {
    /// Real and imaginary parts i.i.d. uniform on `[-s, s]` with
    /// `s = 1/sqrt(input_images * kernel_size²)` per stage, so early
    /// activations stay order-1. Deterministic per seed.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let stages = arch
            .stages()
            .iter()
            .map(|spec| {
                let mut bank =
                    KernelBank::zeros(spec.input_images, spec.output_images, spec.kernel_size);
                let s = 1.0
                    / ((spec.input_images * spec.kernel_size * spec.kernel_size) as f64).sqrt();
                for c in bank.data.iter_mut() {
                    let re = (rng.gen::<f64>() * 2.0 - 1.0) * s;
                    let im = (rng.gen::<f64>() * 2.0 - 1.0) * s;
                    *c = Complex::new(real(re), real(im));
                }
                bank
            })
            .collect();
        Self { stages }
    }

    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self {
            stages: arch
                .stages()
                .iter()
                .map(|s| KernelBank::zeros(s.input_images, s.output_images, s.kernel_size))
                .collect(),
        }
    }

    pub fn stages(&self) -> &[KernelBank<R>] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [KernelBank<R>] {
        &mut self.stages
    }

    pub fn matches(&self, arch: &ArchitectureSpec) -> bool {
        self.stages.len() == arch.stages().len()
            && self.stages.iter().zip(arch.stages()).all(|(b, s)| {
                b.input_images == s.input_images
                    && b.output_images == s.output_images
                    && b.kernel_size == s.kernel_size
            })
    }

    /// Count of independent real parameters (each complex entry is two).
    pub fn real_param_count(&self) -> usize {
        2 * self.stages.iter().map(|b| b.data.len()).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.stages
            .iter()
            .all(|b| b.data.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }

    /// `self += alpha * other`, entrywise; shapes must agree.
    pub fn add_scaled(&mut self, alpha: R, other: &Self) -> Result<()> {
        if self.stages.len() != other.stages.len()
            || self
                .stages
                .iter()
                .zip(&other.stages)
                .any(|(a, b)| a.data.len() != b.data.len())
        {
            return Err(Error::Dimension(
                "kernel gradient shapes do not match the parameters".into(),
            ));
        }
        for (bank, obank) in self.stages.iter_mut().zip(&other.stages) {
            for (c, oc) in bank.data.iter_mut().zip(&obank.data) {
                c.re = c.re + alpha * oc.re;
                c.im = c.im + alpha * oc.im;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: R) {
        for bank in &mut self.stages {
            for c in &mut bank.data {
                c.re = c.re * alpha;
                c.im = c.im * alpha;
            }
        }
    }

    /// Binary layout: stage count as little-endian u64; then per stage a
    /// header of three little-endian u64 (input_images, output_images,
    /// kernel_size) followed by the kernels as interleaved (real, imaginary)
    /// little-endian f64, kernel-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.stages.len() as u64).to_le_bytes());
        for bank in &self.stages {
            out.extend_from_slice(&(bank.input_images as u64).to_le_bytes());
            out.extend_from_slice(&(bank.output_images as u64).to_le_bytes());
            out.extend_from_slice(&(bank.kernel_size as u64).to_le_bytes());
            for c in &bank.data {
                out.extend_from_slice(&c.re.to_f64().unwrap().to_le_bytes());
                out.extend_from_slice(&c.im.to_f64().unwrap().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        fn take<'a>(bytes: &'a [u8], cursor: &mut usize, len: usize) -> Result<&'a [u8]> {
            let slice = bytes
                .get(*cursor..*cursor + len)
                .ok_or_else(|| Error::Format("kernel blob truncated".into()))?;
            *cursor += len;
            Ok(slice)
        }
        fn take_u64(bytes: &[u8], cursor: &mut usize) -> Result<u64> {
            Ok(u64::from_le_bytes(
                take(bytes, cursor, 8)?.try_into().unwrap(),
            ))
        }

        let mut cursor = 0usize;
        let stage_count = take_u64(bytes, &mut cursor)? as usize;
        let mut stages = Vec::with_capacity(stage_count);
        for _ in 0..stage_count {
            let input_images = take_u64(bytes, &mut cursor)? as usize;
            let output_images = take_u64(bytes, &mut cursor)? as usize;
            let kernel_size = take_u64(bytes, &mut cursor)? as usize;
            let mut bank = KernelBank::zeros(input_images, output_images, kernel_size);
            for c in bank.data.iter_mut() {
                let pair = take(bytes, &mut cursor, 16)?;
                let re = f64::from_le_bytes(pair[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(pair[8..16].try_into().unwrap());
                *c = Complex::new(real(re), real(im));
            }
            stages.push(bank);
        }
        if cursor != bytes.len() {
            return Err(Error::Format(format!(
                "kernel blob has {} trailing bytes",
                bytes.len() - cursor
            )));
        }
        Ok(Self { stages })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Subtracts the scalar mean over all pixels (channels pooled) and reports the
/// population standard deviation of the original pixels as the extra feature.
pub fn preprocess<R: Real>(image: &Image<R>) -> (Image<R>, R) {
    let data = image.data();
    let count = real::<R>(data.len() as f64);
    let mean = data.iter().fold(R::zero(), |a, &v| a + v) / count;
    let centered: Vec<R> = data.iter().map(|&v| v - mean).collect();
    let var = centered.iter().fold(R::zero(), |a, &v| a + v * v) / count;
    let image = Image::new(image.channels(), image.height(), image.width(), centered)
        .expect("same shape as input");
    (image, var.sqrt())
}

/// Pads every channel with `pad` zero pixels on each side (the MNIST 28→32
/// shim).
pub fn zero_pad<R: Real>(image: &Image<R>, pad: usize) -> Image<R> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let (nh, nw) = (h + 2 * pad, w + 2 * pad);
    let mut data = vec![R::zero(); c * nh * nw];
    for ch in 0..c {
        let src = image.channel(ch);
        for row in 0..h {
            let dst_base = ch * nh * nw + (row + pad) * nw + pad;
            data[dst_base..dst_base + w].copy_from_slice(&src[row * w..(row + 1) * w]);
        }
    }
    Image::new(c, nh, nw, data).expect("padded shape")
}

fn check_conv_shapes<R: Real>(
    input_count: usize,
    heights: impl Iterator<Item = (usize, usize)>,
    bank: &KernelBank<R>,
) -> Result<usize> {
    if input_count != bank.input_images() {
        return Err(Error::Dimension(format!(
            "stage expects {} input images, got {input_count}",
            bank.input_images()
        )));
    }
    let mut size = None;
    for (h, w) in heights {
        if h != w {
            return Err(Error::Dimension(format!("input image {h}x{w} is not square")));
        }
        if *size.get_or_insert(h) != h {
            return Err(Error::Dimension("input images differ in size".into()));
        }
    }
    let size = size.expect("input_images > 0 was checked");
    if size < bank.kernel_size() {
        return Err(Error::Dimension(format!(
            "kernel size {} exceeds input extent {size}",
            bank.kernel_size()
        )));
    }
    Ok(size)
}

/// The general complex operation: each output image `o` is the sum over input
/// images `i` of the valid cross-correlation of input `i` with kernel `(o,i)`
/// (no kernel flip, plain complex products).
pub fn complex_conv_valid<R: Real>(
    inputs: &[ComplexImage<R>],
    bank: &KernelBank<R>,
) -> Result<Vec<ComplexImage<R>>> {
    let size = check_conv_shapes(
        inputs.len(),
        inputs.iter().map(|im| (im.height(), im.width())),
        bank,
    )?;
    let k = bank.kernel_size();
    let out = size - k + 1;
    let mut outputs = Vec::with_capacity(bank.output_images());
    for o in 0..bank.output_images() {
        let mut acc = vec![Complex::new(R::zero(), R::zero()); out * out];
        for (i, input) in inputs.iter().enumerate() {
            let kern = bank.kernel(o, i);
            for u in 0..k {
                for v in 0..k {
                    let kc = kern[u * k + v];
                    for p in 0..out {
                        let xrow = &input.row(p + u)[v..v + out];
                        let arow = &mut acc[p * out..(p + 1) * out];
                        for q in 0..out {
                            arow[q] = arow[q] + xrow[q] * kc;
                        }
                    }
                }
            }
        }
        outputs.push(ComplexImage::new(out, out, acc)?);
    }
    Ok(outputs)
}

/// Fast path for the pipeline's actual case: real input images against
/// complex kernels. Produces results identical to promoting the inputs to
/// complex and calling [`complex_conv_valid`].
pub fn real_conv_valid<R: Real>(
    inputs: &[Tensor<R>],
    bank: &KernelBank<R>,
) -> Result<Vec<ComplexImage<R>>> {
    let size = check_conv_shapes(
        inputs.len(),
        inputs.iter().map(|im| (im.rows(), im.cols())),
        bank,
    )?;
    let k = bank.kernel_size();
    let out = size - k + 1;
    let mut outputs = Vec::with_capacity(bank.output_images());
    for o in 0..bank.output_images() {
        let mut acc_re = vec![R::zero(); out * out];
        let mut acc_im = vec![R::zero(); out * out];
        for (i, input) in inputs.iter().enumerate() {
            let kern = bank.kernel(o, i);
            let x = input.data();
            for u in 0..k {
                for v in 0..k {
                    let kc = kern[u * k + v];
                    let (kr, ki) = (kc.re, kc.im);
                    for p in 0..out {
                        let xrow = &x[(p + u) * size + v..(p + u) * size + v + out];
                        let rrow = &mut acc_re[p * out..(p + 1) * out];
                        let irow = &mut acc_im[p * out..(p + 1) * out];
                        for q in 0..out {
                            rrow[q] = rrow[q] + xrow[q] * kr;
                            irow[q] = irow[q] + xrow[q] * ki;
                        }
                    }
                }
            }
        }
        let data: Vec<Complex<R>> = acc_re
            .into_iter()
            .zip(acc_im)
            .map(|(re, im)| Complex::new(re, im))
            .collect();
        outputs.push(ComplexImage::new(out, out, data)?);
    }
    Ok(outputs)
}

/// Gradients of the stage's kernels given real inputs and the complex
/// cotangent on the convolution outputs:
/// `grad_K[o,i][u,v] = Σ_{p,q} G_o[p,q] · X_i[p+u, q+v]`.
pub fn real_conv_backward_kernels<R: Real>(
    inputs: &[Tensor<R>],
    grads: &[ComplexImage<R>],
    bank: &KernelBank<R>,
) -> Result<KernelBank<R>> {
    let size = check_conv_shapes(
        inputs.len(),
        inputs.iter().map(|im| (im.rows(), im.cols())),
        bank,
    )?;
    let k = bank.kernel_size();
    let out = size - k + 1;
    if grads.len() != bank.output_images()
        || grads.iter().any(|g| g.height() != out || g.width() != out)
    {
        return Err(Error::Dimension(
            "conv output gradients do not match the stage shape".into(),
        ));
    }
    let mut result = KernelBank::zeros(bank.input_images(), bank.output_images(), k);
    for (o, g) in grads.iter().enumerate() {
        // Split the cotangent into planes once; the inner loops then run on
        // contiguous real slices.
        let gre: Vec<R> = g.data().iter().map(|c| c.re).collect();
        let gim: Vec<R> = g.data().iter().map(|c| c.im).collect();
        for (i, input) in inputs.iter().enumerate() {
            let x = input.data();
            let kern = result.kernel_mut(o, i);
            for u in 0..k {
                for v in 0..k {
                    let mut acc_re = R::zero();
                    let mut acc_im = R::zero();
                    for p in 0..out {
                        let xrow = &x[(p + u) * size + v..(p + u) * size + v + out];
                        let grow_re = &gre[p * out..(p + 1) * out];
                        let grow_im = &gim[p * out..(p + 1) * out];
                        for q in 0..out {
                            acc_re = acc_re + grow_re[q] * xrow[q];
                            acc_im = acc_im + grow_im[q] * xrow[q];
                        }
                    }
                    kern[u * k + v] = Complex::new(acc_re, acc_im);
                }
            }
        }
    }
    Ok(result)
}

/// Gradient flowing back onto the stage's (real) input images:
/// `grad_X_i[a,b] = Σ_o Σ_{u,v} Re(G_o[a-u, b-v] · conj(K_{o,i}[u,v]))`,
/// the real part of the full correlation with the conjugated kernels.
pub fn real_conv_backward_inputs<R: Real>(
    bank: &KernelBank<R>,
    grads: &[ComplexImage<R>],
    input_size: usize,
) -> Result<Vec<Tensor<R>>> {
    let k = bank.kernel_size();
    if input_size < k {
        return Err(Error::Dimension(format!(
            "kernel size {k} exceeds input extent {input_size}"
        )));
    }
    let out = input_size - k + 1;
    if grads.len() != bank.output_images()
        || grads.iter().any(|g| g.height() != out || g.width() != out)
    {
        return Err(Error::Dimension(
            "conv output gradients do not match the stage shape".into(),
        ));
    }
    let planes: Vec<(Vec<R>, Vec<R>)> = grads
        .iter()
        .map(|g| {
            (
                g.data().iter().map(|c| c.re).collect(),
                g.data().iter().map(|c| c.im).collect(),
            )
        })
        .collect();
    let mut result = Vec::with_capacity(bank.input_images());
    for i in 0..bank.input_images() {
        let mut gx = vec![R::zero(); input_size * input_size];
        for (o, (gre, gim)) in planes.iter().enumerate() {
            let kern = bank.kernel(o, i);
            for u in 0..k {
                for v in 0..k {
                    let kc = kern[u * k + v];
                    let (kr, ki) = (kc.re, kc.im);
                    for p in 0..out {
                        let grow_re = &gre[p * out..(p + 1) * out];
                        let grow_im = &gim[p * out..(p + 1) * out];
                        let base = (p + u) * input_size + v;
                        let xrow = &mut gx[base..base + out];
                        for q in 0..out {
                            // Re(G · conj(K)) = g_re k_re + g_im k_im
                            xrow[q] = xrow[q] + grow_re[q] * kr + grow_im[q] * ki;
                        }
                    }
                }
            }
        }
        result.push(Tensor::new(vec![input_size, input_size], gx)?);
    }
    Ok(result)
}

/// Pixelwise absolute value of a complex image.
pub fn modulus<R: Real>(image: &ComplexImage<R>) -> Tensor<R> {
    let data: Vec<R> = image.data().iter().map(|c| c.norm()).collect();
    Tensor::new(vec![image.height(), image.width()], data).expect("same shape")
}

/// Backward of [`modulus`]: an upstream real gradient `g` at pixel `w = a+bi`
/// becomes the complex cotangent `g·(a/|w|, b/|w|)`, defined as zero at
/// `w = 0`.
pub fn modulus_backward<R: Real>(
    image: &ComplexImage<R>,
    grad: &Tensor<R>,
) -> Result<ComplexImage<R>> {
    if grad.rank() != 2 || grad.rows() != image.height() || grad.cols() != image.width() {
        return Err(Error::Dimension(format!(
            "modulus gradient shape {:?} does not match {}x{} image",
            grad.shape(),
            image.height(),
            image.width()
        )));
    }
    let data: Vec<Complex<R>> = image
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&w, &g)| {
            let norm = w.norm();
            if norm == R::zero() {
                Complex::new(R::zero(), R::zero())
            } else {
                Complex::new(g * w.re / norm, g * w.im / norm)
            }
        })
        .collect();
    ComplexImage::new(image.height(), image.width(), data)
}

/// Mean over each disjoint 2×2 patch; both extents must be even and halve.
pub fn avgpool2x2<R: Real>(image: &Tensor<R>) -> Result<Tensor<R>> {
    if image.rank() != 2 {
        return Err(Error::Dimension(format!(
            "avgpool2x2 needs a rank-2 image, got shape {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.rows(), image.cols());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "avgpool2x2 needs even extents, got {h}x{w}"
        )));
    }
    let quarter = real::<R>(0.25);
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(oh * ow);
    for p in 0..oh {
        let top = image.row(2 * p);
        let bottom = image.row(2 * p + 1);
        for q in 0..ow {
            data.push(
                (top[2 * q] + top[2 * q + 1] + bottom[2 * q] + bottom[2 * q + 1]) * quarter,
            );
        }
    }
    Tensor::new(vec![oh, ow], data)
}

/// Backward of [`avgpool2x2`]: each output gradient spreads `g/4` to its four
/// source pixels.
pub fn avgpool2x2_backward<R: Real>(grad: &Tensor<R>) -> Tensor<R> {
    let (oh, ow) = (grad.rows(), grad.cols());
    let quarter = real::<R>(0.25);
    let (h, w) = (2 * oh, 2 * ow);
    let mut data = vec![R::zero(); h * w];
    for p in 0..oh {
        let grow = grad.row(p);
        for q in 0..ow {
            let g = grow[q] * quarter;
            data[2 * p * w + 2 * q] = g;
            data[2 * p * w + 2 * q + 1] = g;
            data[(2 * p + 1) * w + 2 * q] = g;
            data[(2 * p + 1) * w + 2 * q + 1] = g;
        }
    }
    Tensor::new(vec![h, w], data).expect("doubled shape")
}

/// Intermediates retained by [`convnet_forward`] for the backward pass: each
/// stage's real input images and complex convolution outputs.
#[derive(Debug, Clone)]
pub struct ConvTrace<R: Real> {
    stage_inputs: Vec<Vec<Tensor<R>>>,
    conv_outputs: Vec<Vec<ComplexImage<R>>>,
    std_feature: R,
}

impl<R: Real> ConvTrace<R> {
    pub fn stage_inputs(&self) -> &[Vec<Tensor<R>>] {
        &self.stage_inputs
    }

    pub fn conv_outputs(&self) -> &[Vec<ComplexImage<R>>] {
        &self.conv_outputs
    }

    pub fn std_feature(&self) -> R {
        self.std_feature
    }
}

/// Full feature map: preprocess, run every stage (convolution, modulus,
/// pool), flatten the final real images, and append the standard-deviation
/// feature. Returns the feature vector and the trace needed by
/// [`convnet_backward`].
pub fn convnet_forward<R: Real>(
    arch: &ArchitectureSpec,
    params: &ConvParams<R>,
    raw: &Image<R>,
) -> Result<(Tensor<R>, ConvTrace<R>)> {
    if !params.matches(arch) {
        return Err(Error::Dimension(
            "kernel parameters do not match the architecture".into(),
        ));
    }
    if raw.channels() != arch.channels()
        || raw.height() != arch.input_size()
        || raw.width() != arch.input_size()
    {
        return Err(Error::Dimension(format!(
            "raw image {}x{}x{} does not match the architecture's {}x{s}x{s}",
            raw.channels(),
            raw.height(),
            raw.width(),
            arch.channels(),
            s = arch.input_size(),
        )));
    }
    let (centered, std_feature) = preprocess(raw);
    let size = centered.height();
    let mut current: Vec<Tensor<R>> = (0..centered.channels())
        .map(|c| Tensor::new(vec![size, size], centered.channel(c).to_vec()))
        .collect::<Result<_>>()?;
    let mut stage_inputs = Vec::with_capacity(arch.stages().len());
    let mut conv_outputs = Vec::with_capacity(arch.stages().len());
    for bank in params.stages() {
        let conv = real_conv_valid(&current, bank)?;
        let pooled: Vec<Tensor<R>> = conv
            .iter()
            .map(|c| avgpool2x2(&modulus(c)))
            .collect::<Result<_>>()?;
        stage_inputs.push(std::mem::replace(&mut current, pooled));
        conv_outputs.push(conv);
    }
    let mut x = Vec::with_capacity(arch.feature_len());
    for img in &current {
        x.extend_from_slice(img.data());
    }
    x.push(std_feature);
    debug_assert_eq!(x.len(), arch.feature_len());
    Ok((
        Tensor::from_vec(x),
        ConvTrace {
            stage_inputs,
            conv_outputs,
            std_feature,
        },
    ))
}

/// Reverse-mode gradients of the feature vector probe `⟨x, grad_x⟩` with
/// respect to every kernel entry, composing the adjoints of pooling, modulus,
/// and convolution stage by stage. The trailing std-feature entry of `grad_x`
/// does not reach any kernel and is ignored.
pub fn convnet_backward<R: Real>(
    arch: &ArchitectureSpec,
    params: &ConvParams<R>,
    trace: &ConvTrace<R>,
    grad_x: &Tensor<R>,
) -> Result<ConvParams<R>> {
    if grad_x.len() != arch.feature_len() {
        return Err(Error::Dimension(format!(
            "feature gradient has length {}, architecture produces {}",
            grad_x.len(),
            arch.feature_len()
        )));
    }
    if !params.matches(arch) || trace.stage_inputs.len() != arch.stages().len() {
        return Err(Error::Dimension(
            "parameters or trace do not match the architecture".into(),
        ));
    }
    let (fi, fs) = (arch.final_images(), arch.final_size());
    let mut grad_pooled: Vec<Tensor<R>> = (0..fi)
        .map(|i| {
            Tensor::new(
                vec![fs, fs],
                grad_x.data()[i * fs * fs..(i + 1) * fs * fs].to_vec(),
            )
        })
        .collect::<Result<_>>()?;
    let mut grads = ConvParams::zeros(arch);
    for s in (0..arch.stages().len()).rev() {
        let g_conv: Vec<ComplexImage<R>> = trace.conv_outputs[s]
            .iter()
            .zip(&grad_pooled)
            .map(|(c, gp)| modulus_backward(c, &avgpool2x2_backward(gp)))
            .collect::<Result<_>>()?;
        grads.stages_mut()[s] =
            real_conv_backward_kernels(&trace.stage_inputs[s], &g_conv, &params.stages()[s])?;
        if s > 0 {
            grad_pooled = real_conv_backward_inputs(
                &params.stages()[s],
                &g_conv,
                arch.stages()[s].input_size,
            )?;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_gradient, max_relative_error};
    use crate::tensor::dot;

    fn tiny_arch(rows: &[(usize, usize, usize, usize)]) -> ArchitectureSpec {
        ArchitectureSpec::new(
            rows.iter()
                .map(|&(i, o, k, s)| ConvStageSpec::new(i, o, k, s).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random_image(rng: &mut rand_chacha::ChaCha8Rng, c: usize, s: usize) -> Image<f64> {
        Image::new(c, s, s, (0..c * s * s).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    use rand::Rng;

    #[test]
    fn stage_spec_validation() {
        let s = ConvStageSpec::new(1, 4, 2, 5).unwrap();
        assert_eq!(s.conv_size(), 4);
        assert_eq!(s.output_size, 2);
        assert!(ConvStageSpec::new(1, 1, 2, 4).is_err()); // conv extent 3 is odd
        assert!(ConvStageSpec::new(0, 1, 2, 5).is_err());
        assert!(ConvStageSpec::new(1, 0, 2, 5).is_err());
        assert!(ConvStageSpec::new(1, 1, 0, 5).is_err());
        assert!(ConvStageSpec::new(1, 1, 7, 5).is_err());
    }

    #[test]
    fn architecture_chain_validation() {
        assert!(ArchitectureSpec::new(vec![]).is_err());
        let a = ConvStageSpec::new(1, 4, 3, 8).unwrap(); // out 4 imgs of 3x3
        let good = ConvStageSpec::new(4, 2, 2, 3).unwrap();
        assert!(ArchitectureSpec::new(vec![a, good]).is_ok());
        let bad_count = ConvStageSpec::new(5, 2, 2, 3).unwrap();
        assert!(ArchitectureSpec::new(vec![a, bad_count]).is_err());
        let bad_size = ConvStageSpec::new(4, 2, 2, 5).unwrap();
        assert!(ArchitectureSpec::new(vec![a, bad_size]).is_err());
    }

    #[test]
    fn presets_match_tables() {
        let expect = |p: Preset, rows: &[(usize, usize, usize, usize, usize)], n: usize| {
            let spec = p.spec();
            let got: Vec<_> = spec
                .stages()
                .iter()
                .map(|s| {
                    (
                        s.input_images,
                        s.output_images,
                        s.kernel_size,
                        s.input_size,
                        s.output_size,
                    )
                })
                .collect();
            assert_eq!(got, rows, "{p}");
            assert_eq!(spec.feature_len(), n, "{p}");
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        };
        expect(
            Preset::CifarLarger,
            &[(3, 16, 3, 32, 15), (16, 128, 2, 15, 7), (128, 1024, 2, 7, 3)],
            9217,
        );
        expect(
            Preset::MnistLarger,
            &[(1, 16, 3, 32, 15), (16, 128, 2, 15, 7), (128, 1024, 2, 7, 3)],
            9217,
        );
        expect(
            Preset::CifarSmaller,
            &[(3, 16, 3, 32, 15), (16, 64, 2, 15, 7), (64, 256, 2, 7, 3)],
            2305,
        );
        expect(
            Preset::MnistSmaller,
            &[(1, 16, 3, 32, 15), (16, 64, 2, 15, 7), (64, 256, 2, 7, 3)],
            2305,
        );
        expect(
            Preset::ImagenetLarger,
            &[
                (3, 16, 5, 128, 62),
                (16, 64, 3, 62, 30),
                (64, 256, 3, 30, 14),
                (256, 1024, 3, 14, 6),
            ],
            36865,
        );
        expect(
            Preset::ImagenetSmaller,
            &[
                (3, 16, 5, 128, 62),
                (16, 64, 3, 62, 30),
                (64, 256, 3, 30, 14),
                (256, 256, 3, 14, 6),
            ],
            9217,
        );
        assert!("cifar-big".parse::<Preset>().is_err());
    }

    #[test]
    fn preprocess_cases() {
        let constant = Image::new(2, 2, 2, vec![3.5; 8]).unwrap();
        let (centered, std) = preprocess(&constant);
        assert!(centered.data().iter().all(|&v| v == 0.0));
        assert_eq!(std, 0.0);

        let row = Image::new(1, 1, 2, vec![0.0f64, 2.0]).unwrap();
        let (centered, std) = preprocess(&row);
        assert_eq!(centered.data(), &[-1.0, 1.0]);
        assert!((std - 1.0).abs() < 1e-15);

        let mut rng = crate::rng::seeded(2);
        let img = random_image(&mut rng, 3, 4);
        let (c1, s1) = preprocess(&img);
        let (c2, s2) = preprocess(&img.scaled(2.5));
        assert!((s2 - 2.5 * s1).abs() < 1e-12);
        for (a, b) in c2.data().iter().zip(c1.data()) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pad_layout() {
        let img = Image::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let padded = zero_pad(&img, 2);
        assert_eq!((padded.height(), padded.width()), (6, 6));
        assert_eq!(padded.channel(0)[2 * 6 + 2], 1.0);
        assert_eq!(padded.channel(0)[2 * 6 + 3], 2.0);
        assert_eq!(padded.channel(0)[3 * 6 + 2], 3.0);
        assert_eq!(padded.channel(0)[3 * 6 + 3], 4.0);
        let total: f64 = padded.data().iter().sum();
        assert_eq!(total, 10.0);
    }

    fn bank_from(
        input_images: usize,
        output_images: usize,
        kernel_size: usize,
        entries: Vec<Complex<f64>>,
    ) -> KernelBank<f64> {
        let mut bank = KernelBank::zeros(input_images, output_images, kernel_size);
        bank.data_mut().copy_from_slice(&entries);
        bank
    }

    #[test]
    fn conv_identity_kernel() {
        let input = ComplexImage::new(
            2,
            2,
            vec![
                Complex::new(1.0, -1.0),
                Complex::new(2.0, 0.5),
                Complex::new(-3.0, 0.0),
                Complex::new(0.0, 4.0),
            ],
        )
        .unwrap();
        let bank = bank_from(1, 1, 1, vec![Complex::new(1.0, 0.0)]);
        let out = complex_conv_valid(&[input.clone()], &bank).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].data(), input.data());
    }

    #[test]
    fn conv_patch_sums_with_ones_kernel() {
        let input = Tensor::new(vec![3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let bank = bank_from(1, 1, 2, vec![Complex::new(1.0, 0.0); 4]);
        let out = real_conv_valid(&[input], &bank).unwrap();
        let values: Vec<f64> = out[0].data().iter().map(|c| c.re).collect();
        assert_eq!(values, vec![12.0, 16.0, 24.0, 28.0]);
        assert!(out[0].data().iter().all(|c| c.im == 0.0));
    }

    #[test]
    fn conv_matches_naive_quadruple_loop() {
        let mut rng = crate::rng::seeded(31);
        let mut rand_c =
            |n: usize| -> Vec<Complex<f64>> {
                (0..n)
                    .map(|_| {
                        Complex::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
                    })
                    .collect()
            };
        let inputs: Vec<ComplexImage<f64>> = (0..2)
            .map(|_| ComplexImage::new(6, 6, rand_c(36)).unwrap())
            .collect();
        let bank = bank_from(2, 3, 3, rand_c(2 * 3 * 9));

        let fast = complex_conv_valid(&inputs, &bank).unwrap();

        // Independent quadruple-loop oracle, scalar complex arithmetic only.
        let out = 4;
        for o in 0..3 {
            for p in 0..out {
                for q in 0..out {
                    let mut acc = Complex::new(0.0, 0.0);
                    for (i, input) in inputs.iter().enumerate() {
                        let kern = bank.kernel(o, i);
                        for u in 0..3 {
                            for v in 0..3 {
                                acc += input.get(p + u, q + v) * kern[u * 3 + v];
                            }
                        }
                    }
                    let got = fast[o].get(p, q);
                    assert!(
                        (got - acc).norm() <= 1e-12 * acc.norm().max(1.0),
                        "o={o} p={p} q={q}: {got} vs {acc}"
                    );
                }
            }
        }
    }

    #[test]
    fn real_fast_path_matches_complex_op() {
        let mut rng = crate::rng::seeded(40);
        let inputs: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                Tensor::new(
                    vec![7, 7],
                    (0..49).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
                )
                .unwrap()
            })
            .collect();
        let entries: Vec<Complex<f64>> = (0..3 * 2 * 4)
            .map(|_| Complex::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        let bank = bank_from(3, 2, 2, entries);

        let fast = real_conv_valid(&inputs, &bank).unwrap();
        let promoted: Vec<ComplexImage<f64>> =
            inputs.iter().map(ComplexImage::from_real).collect();
        let reference = complex_conv_valid(&promoted, &bank).unwrap();
        for (f, r) in fast.iter().zip(&reference) {
            for (a, b) in f.data().iter().zip(r.data()) {
                assert!((a - b).norm() <= 1e-15 * b.norm().max(1.0));
            }
        }

        // Shape errors surface as dimension errors.
        assert!(real_conv_valid(&inputs[..2], &bank).is_err());
    }

    #[test]
    fn modulus_values_and_gradient() {
        let img = ComplexImage::new(
            1,
            2,
            vec![Complex::new(3.0, 4.0), Complex::new(0.0, 0.0)],
        )
        .unwrap();
        let m = modulus(&img);
        assert_eq!(m.data(), &[5.0, 0.0]);

        let grad = Tensor::new(vec![1, 2], vec![2.0f64, 2.0]).unwrap();
        let back = modulus_backward(&img, &grad).unwrap();
        assert!((back.data()[0].re - 2.0 * 0.6).abs() < 1e-15);
        assert!((back.data()[0].im - 2.0 * 0.8).abs() < 1e-15);
        assert_eq!(back.data()[1], Complex::new(0.0, 0.0)); // zero-pixel subgradient

        // Finite differences over (a, b) for pixels away from the kink.
        let mut rng = crate::rng::seeded(50);
        for _ in 0..50 {
            let pixels: Vec<Complex<f64>> = (0..6)
                .map(|_| loop {
                    let c =
                        Complex::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
                    if c.norm() > 1e-3 {
                        break c;
                    }
                })
                .collect();
            let img = ComplexImage::new(2, 3, pixels.clone()).unwrap();
            let weights: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let w = Tensor::new(vec![2, 3], weights.clone()).unwrap();
            let analytic = modulus_backward(&img, &w).unwrap();
            let flat_analytic: Vec<f64> = analytic
                .data()
                .iter()
                .flat_map(|c| [c.re, c.im])
                .collect();
            let flat_point: Vec<f64> = pixels.iter().flat_map(|c| [c.re, c.im]).collect();
            let fd = central_gradient(
                |p| {
                    let img = ComplexImage::new(
                        2,
                        3,
                        p.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect(),
                    )
                    .unwrap();
                    dot(modulus(&img).data(), &weights)
                },
                &flat_point,
                1e-6,
            );
            assert!(max_relative_error(&flat_analytic, &fd, 1e-3) < 1e-5);
        }
    }

    #[test]
    fn avgpool_cases() {
        let constant = Tensor::new(vec![4, 4], vec![0.7; 16]).unwrap();
        let pooled = avgpool2x2(&constant).unwrap();
        assert_eq!(pooled.shape(), &[2, 2]);
        assert!(pooled.data().iter().all(|&v| v == 0.7));

        let img = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2x2(&img).unwrap().data(), &[2.5]);

        let odd = Tensor::new(vec![3, 3], vec![0.0; 9]).unwrap();
        assert!(avgpool2x2(&odd).is_err());

        let grad = Tensor::new(vec![1, 1], vec![8.0]).unwrap();
        let back = avgpool2x2_backward(&grad);
        assert_eq!(back.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn avgpool_adjoint_identity() {
        // ⟨pool(x), g⟩ == ⟨x, pool_backward(g)⟩ for a linear map and its adjoint.
        let mut rng = crate::rng::seeded(60);
        let x = Tensor::new(vec![6, 6], (0..36).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let g = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let lhs = dot(avgpool2x2(&x).unwrap().data(), g.data());
        let rhs = dot(x.data(), avgpool2x2_backward(&g).data());
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn kernel_init_bounds_and_determinism() {
        let arch = tiny_arch(&[(2, 3, 3, 8), (3, 2, 2, 3)]);
        let params = ConvParams::<f64>::init(&arch, 9);
        for (bank, spec) in params.stages().iter().zip(arch.stages()) {
            let s = 1.0
                / ((spec.input_images * spec.kernel_size * spec.kernel_size) as f64).sqrt();
            assert!(bank
                .data()
                .iter()
                .all(|c| c.re.abs() <= s && c.im.abs() <= s));
            assert!(bank.data().iter().any(|c| c.re != 0.0));
        }
        assert_eq!(params, ConvParams::<f64>::init(&arch, 9));
        assert_ne!(params, ConvParams::<f64>::init(&arch, 10));
    }

    #[test]
    fn params_arithmetic_and_serialization() {
        let arch = tiny_arch(&[(1, 2, 3, 6)]);
        let mut a = ConvParams::<f64>::init(&arch, 1);
        let b = ConvParams::<f64>::init(&arch, 2);
        let orig = a.clone();
        a.add_scaled(-0.5, &b).unwrap();
        for ((x, y), z) in a
            .stages()[0]
            .data()
            .iter()
            .zip(orig.stages()[0].data())
            .zip(b.stages()[0].data())
        {
            assert!((x.re - (y.re - 0.5 * z.re)).abs() < 1e-15);
            assert!((x.im - (y.im - 0.5 * z.im)).abs() < 1e-15);
        }
        a.scale(2.0);
        assert!(a.all_finite());
        assert_eq!(a.real_param_count(), 2 * 2 * 9);

        let bytes = orig.to_bytes();
        assert_eq!(bytes.len(), 8 + 3 * 8 + 2 * 9 * 16);
        assert_eq!(u64::from_le_bytes(bytes[0..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        let back = ConvParams::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, orig);
        assert!(ConvParams::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let mismatched = tiny_arch(&[(1, 2, 2, 5)]);
        assert!(!orig.matches(&mismatched));
        let grads = ConvParams::<f64>::zeros(&mismatched);
        let mut c = orig;
        assert!(c.add_scaled(1.0, &grads).is_err());
    }

    #[test]
    fn forward_shapes_for_all_presets() {
        let mut rng = crate::rng::seeded(70);
        for preset in Preset::ALL {
            let arch = preset.spec();
            let params = ConvParams::<f64>::init(&arch, 3);
            let raw = random_image(&mut rng, arch.channels(), arch.input_size());
            let (x, trace) = convnet_forward(&arch, &params, &raw).unwrap();
            assert_eq!(x.len(), arch.feature_len(), "{preset}");
            for (s, spec) in arch.stages().iter().enumerate() {
                assert_eq!(trace.stage_inputs()[s].len(), spec.input_images);
                assert_eq!(trace.stage_inputs()[s][0].rows(), spec.input_size);
                assert_eq!(trace.conv_outputs()[s].len(), spec.output_images);
                assert_eq!(trace.conv_outputs()[s][0].height(), spec.conv_size());
            }
        }
    }

    #[test]
    fn forward_rejects_mismatched_input() {
        let arch = tiny_arch(&[(1, 1, 3, 4)]);
        let params = ConvParams::<f64>::init(&arch, 1);
        let wrong_size = Image::new(1, 5, 5, vec![0.0; 25]).unwrap();
        assert!(convnet_forward(&arch, &params, &wrong_size).is_err());
        let wrong_channels = Image::new(2, 4, 4, vec![0.0; 32]).unwrap();
        assert!(convnet_forward(&arch, &params, &wrong_channels).is_err());
        let other_params = ConvParams::<f64>::init(&tiny_arch(&[(1, 2, 3, 4)]), 1);
        let ok = Image::new(1, 4, 4, vec![0.5; 16]).unwrap();
        assert!(convnet_forward(&arch, &other_params, &ok).is_err());
    }

    #[test]
    fn forward_positive_homogeneity() {
        let arch = tiny_arch(&[(2, 3, 3, 12), (3, 2, 2, 5)]);
        let params = ConvParams::<f64>::init(&arch, 5);
        let mut rng = crate::rng::seeded(80);
        let raw = random_image(&mut rng, 2, 12);
        let (base, _) = convnet_forward(&arch, &params, &raw).unwrap();
        for alpha in [0.5, 2.0, 7.0] {
            let (scaled, _) = convnet_forward(&arch, &params, &raw.scaled(alpha)).unwrap();
            for (a, b) in scaled.data().iter().zip(base.data()) {
                assert!(
                    (a - alpha * b).abs() <= 1e-10 * (alpha * b).abs().max(1e-12),
                    "alpha={alpha}: {a} vs {}",
                    alpha * b
                );
            }
        }
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_grads() {
        let arch = tiny_arch(&[(1, 2, 3, 8)]);
        let params = ConvParams::<f64>::init(&arch, 6);
        let mut rng = crate::rng::seeded(81);
        let raw = random_image(&mut rng, 1, 8);
        let (_, trace) = convnet_forward(&arch, &params, &raw).unwrap();
        let grads = convnet_backward(
            &arch,
            &params,
            &trace,
            &Tensor::zeros(vec![arch.feature_len()]),
        )
        .unwrap();
        assert!(grads
            .stages()
            .iter()
            .all(|b| b.data().iter().all(|c| c.re == 0.0 && c.im == 0.0)));
    }

    /// Finite-difference check of d⟨x, w⟩/d(kernel entries); inputs are
    /// redrawn until every convolution pixel sits away from the modulus kink.
    fn check_kernel_grads_fd(
        arch: &ArchitectureSpec,
        seed: u64,
        step: f64,
        tolerance: f64,
    ) {
        let mut rng = crate::rng::seeded(seed);
        let params = ConvParams::<f64>::init(arch, seed ^ 0x5a);
        let raw = loop {
            let candidate = random_image(&mut rng, arch.channels(), arch.input_size());
            let (_, trace) = convnet_forward(arch, &params, &candidate).unwrap();
            let min_modulus = trace
                .conv_outputs()
                .iter()
                .flatten()
                .flat_map(|img| img.data())
                .map(|c| c.norm())
                .fold(f64::INFINITY, f64::min);
            if min_modulus > 1e-2 {
                break candidate;
            }
        };
        let w: Vec<f64> = (0..arch.feature_len())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();

        let (_, trace) = convnet_forward(arch, &params, &raw).unwrap();
        let analytic = convnet_backward(arch, &params, &trace, &Tensor::from_vec(w.clone()))
            .unwrap();
        let flat_analytic: Vec<f64> = analytic
            .stages()
            .iter()
            .flat_map(|b| b.data().iter().flat_map(|c| [c.re, c.im]))
            .collect();

        let probe = |p: &ConvParams<f64>| {
            let (x, _) = convnet_forward(arch, p, &raw).unwrap();
            dot(x.data(), &w)
        };
        let mut fd = Vec::with_capacity(flat_analytic.len());
        let mut probe_params = params.clone();
        for s in 0..arch.stages().len() {
            for idx in 0..params.stages()[s].data().len() {
                for part in 0..2 {
                    let original = probe_params.stages()[s].data()[idx];
                    let bump = |c: Complex<f64>, d: f64| {
                        if part == 0 {
                            Complex::new(c.re + d, c.im)
                        } else {
                            Complex::new(c.re, c.im + d)
                        }
                    };
                    probe_params.stages_mut()[s].data_mut()[idx] = bump(original, step);
                    let plus = probe(&probe_params);
                    probe_params.stages_mut()[s].data_mut()[idx] = bump(original, -step);
                    let minus = probe(&probe_params);
                    probe_params.stages_mut()[s].data_mut()[idx] = original;
                    fd.push((plus - minus) / (2.0 * step));
                }
            }
        }
        let err = max_relative_error(&flat_analytic, &fd, 1e-3);
        assert!(err < tolerance, "max relative error {err}");
    }

    #[test]
    fn backward_matches_fd_single_stage() {
        check_kernel_grads_fd(&tiny_arch(&[(1, 1, 3, 4)]), 90, 1e-6, 1e-5);
    }

    #[test]
    fn backward_matches_fd_two_stages() {
        check_kernel_grads_fd(&tiny_arch(&[(1, 2, 3, 8), (2, 2, 2, 3)]), 91, 1e-6, 1e-5);
    }
}
