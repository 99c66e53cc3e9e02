//! Image representation, PPM I/O, colorspace transforms and block/context
//! extraction with edge replication.

use thiserror::Error;

pub const BLOCK: usize = 8;
pub const CONTEXT: usize = 3 * BLOCK;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("PPM parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("expected {expected:?} image, got {actual:?}")]
    Colorspace {
        expected: ColorSpace,
        actual: ColorSpace,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("block ({bx}, {by}) outside the {grid_w}x{grid_h} block grid")]
    BlockOutOfRange {
        bx: usize,
        by: usize,
        grid_w: usize,
        grid_h: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
    Lab,
}

/// Planar three-channel float image.
///
/// RGB and YCbCr samples lie in `[0, 1]` (chroma centred on 0.5). Lab stores
/// `L/100` in plane 0 and `a/128`, `b/128` in planes 1 and 2.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    planes: [Vec<f32>; 3],
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        colorspace: ColorSpace,
        planes: [Vec<f32>; 3],
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimension(format!("empty image {width}x{height}")));
        }
        if planes.iter().any(|p| p.len() != width * height) {
            return Err(ImageError::Dimension(format!(
                "plane lengths {:?} do not match {width}x{height}",
                planes.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        if planes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ImageError::Dimension("non-finite sample".into()));
        }
        Ok(Self {
            width,
            height,
            colorspace,
            planes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.planes[c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = y * self.width + x;
        [self.planes[0][i], self.planes[1][i], self.planes[2][i]]
    }
}

/// 8-bit planar image, the interchange format of every block-level stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteImage {
    pub width: usize,
    pub height: usize,
    pub colorspace: ColorSpace,
    pub planes: [Vec<u8>; 3],
}

impl ByteImage {
    pub fn new(
        width: usize,
        height: usize,
        colorspace: ColorSpace,
        planes: [Vec<u8>; 3],
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || planes.iter().any(|p| p.len() != width * height) {
            return Err(ImageError::Dimension(format!(
                "planes do not form a non-empty {width}x{height} image"
            )));
        }
        Ok(Self {
            width,
            height,
            colorspace,
            planes,
        })
    }

    pub fn filled(width: usize, height: usize, colorspace: ColorSpace, value: [u8; 3]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            colorspace,
            planes: [vec![value[0]; n], vec![value[1]; n], vec![value[2]; n]],
        }
    }

    /// Blocks per row and per column (partial blocks count).
    pub fn block_grid(&self) -> (usize, usize) {
        (self.width.div_ceil(BLOCK), self.height.div_ceil(BLOCK))
    }

    /// Sample with coordinates clamped into the image (edge replication).
    #[inline]
    pub fn sample_clamped(&self, c: usize, x: isize, y: isize) -> u8 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.planes[c][yc * self.width + xc]
    }

    /// Quantizes a float image once: `round(v·255)` for `[0,1]` planes,
    /// `round(v·128 + 128)` for Lab chroma, clamped to `[0, 255]`.
    pub fn from_raster(img: &RasterImage) -> Self {
        let planes = std::array::from_fn(|c| {
            img.plane(c)
                .iter()
                .map(|&v| quantize_sample(img.colorspace, c, v))
                .collect()
        });
        Self {
            width: img.width,
            height: img.height,
            colorspace: img.colorspace,
            planes,
        }
    }

    pub fn to_raster(&self) -> RasterImage {
        let planes = std::array::from_fn(|c| {
            self.planes[c]
                .iter()
                .map(|&b| dequantize_sample(self.colorspace, c, b))
                .collect()
        });
        RasterImage {
            width: self.width,
            height: self.height,
            colorspace: self.colorspace,
            planes,
        }
    }

    pub fn crop(&self, width: usize, height: usize) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || width > self.width || height > self.height {
            return Err(ImageError::Dimension(format!(
                "cannot crop {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        let planes = std::array::from_fn(|c| {
            (0..height)
                .flat_map(|y| self.planes[c][y * self.width..y * self.width + width].iter().copied())
                .collect()
        });
        Ok(Self {
            width,
            height,
            colorspace: self.colorspace,
            planes,
        })
    }

    /// Converts through float to another colorspace and re-quantizes.
    pub fn convert(&self, target: ColorSpace) -> Self {
        if target == self.colorspace {
            return self.clone();
        }
        ByteImage::from_raster(&convert_colorspace(&self.to_raster(), target))
    }
}

fn round_half_away(v: f64) -> f64 {
    v.round()
}

fn quantize_sample(cs: ColorSpace, channel: usize, v: f32) -> u8 {
    let scaled = match (cs, channel) {
        (ColorSpace::Lab, 1 | 2) => v as f64 * 128.0 + 128.0,
        _ => v as f64 * 255.0,
    };
    round_half_away(scaled).clamp(0.0, 255.0) as u8
}

fn dequantize_sample(cs: ColorSpace, channel: usize, b: u8) -> f32 {
    match (cs, channel) {
        (ColorSpace::Lab, 1 | 2) => ((b as f64 - 128.0) / 128.0) as f32,
        _ => (b as f64 / 255.0) as f32,
    }
}

/// Parses a binary PPM (`P6`, maxval 255).
pub fn load_ppm(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let mut pos = 0usize;
    let err = |offset: usize, reason: &str| ImageError::Parse {
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "expected magic P6"));
    }
    pos += 2;

    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and '#' comments may precede each header number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        if i == 0 && pos == 2 {
            return Err(err(pos, "missing whitespace after magic"));
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(2, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected a single whitespace byte before the raster")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| err(2, "image dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    let mut planes = [
        Vec::with_capacity(width * height),
        Vec::with_capacity(width * height),
        Vec::with_capacity(width * height),
    ];
    for px in raster[..need].chunks_exact(3) {
        for c in 0..3 {
            planes[c].push(px[c] as f32 / 255.0);
        }
    }
    Ok(RasterImage {
        width,
        height,
        colorspace: ColorSpace::Rgb,
        planes,
    })
}

/// Serializes an RGB image as `P6` with header `P6\n<w> <h>\n255\n`.
pub fn save_ppm(img: &RasterImage) -> Result<Vec<u8>, ImageError> {
    if img.colorspace != ColorSpace::Rgb {
        return Err(ImageError::Colorspace {
            expected: ColorSpace::Rgb,
            actual: img.colorspace,
        });
    }
    Ok(ppm_bytes(&ByteImage::from_raster(img)))
}

/// `P6` bytes of an RGB byte image.
pub fn ppm_bytes(img: &ByteImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        out.extend_from_slice(&[img.planes[0][i], img.planes[1][i], img.planes[2][i]]);
    }
    out
}

/// Loads a `P6` file straight into bytes without the float detour.
pub fn load_ppm_bytes(bytes: &[u8]) -> Result<ByteImage, ImageError> {
    Ok(ByteImage::from_raster(&load_ppm(bytes)?))
}

// sRGB / D65 constants.
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D {
        t * t * t
    } else {
        3.0 * D * D * (t - 4.0 / 29.0)
    }
}

fn rgb_to_lab([r, g, b]: [f64; 3]) -> [f64; 3] {
    let (r, g, b) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let bb = 200.0 * (fy - fz);
    [l / 100.0, a / 128.0, bb / 128.0]
}

fn lab_to_rgb([l, a, b]: [f64; 3]) -> [f64; 3] {
    let (l, a, b) = (l * 100.0, a * 128.0, b * 128.0);
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let (x, y, z) = (XN * lab_f_inv(fx), YN * lab_f_inv(fy), ZN * lab_f_inv(fz));
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let bl = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [
        linear_to_srgb(r.clamp(0.0, 1.0)),
        linear_to_srgb(g.clamp(0.0, 1.0)),
        linear_to_srgb(bl.clamp(0.0, 1.0)),
    ]
}

fn rgb_to_ycbcr([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168_735_892 * r - 0.331_264_108 * g + 0.5 * b + 0.5,
        0.5 * r - 0.418_687_589 * g - 0.081_312_411 * b + 0.5,
    ]
}

fn ycbcr_to_rgb([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let (cb, cr) = (cb - 0.5, cr - 0.5);
    [
        y + 1.402 * cr,
        y - 0.344_136_286 * cb - 0.714_136_286 * cr,
        y + 1.772 * cb,
    ]
}

/// Full-range JFIF YCbCr and sRGB/D65 CIE Lab conversions. RGB and YCbCr
/// results are clamped to `[0, 1]`.
pub fn convert_colorspace(img: &RasterImage, target: ColorSpace) -> RasterImage {
    if img.colorspace == target {
        return img.clone();
    }
    let n = img.width * img.height;
    let mut planes = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    for i in 0..n {
        let px = [
            img.planes[0][i] as f64,
            img.planes[1][i] as f64,
            img.planes[2][i] as f64,
        ];
        let rgb = match img.colorspace {
            ColorSpace::Rgb => px,
            ColorSpace::YCbCr => ycbcr_to_rgb(px).map(|v| v.clamp(0.0, 1.0)),
            ColorSpace::Lab => lab_to_rgb(px),
        };
        let out = match target {
            ColorSpace::Rgb => rgb,
            ColorSpace::YCbCr => rgb_to_ycbcr(rgb).map(|v| v.clamp(0.0, 1.0)),
            ColorSpace::Lab => rgb_to_lab(rgb),
        };
        for c in 0..3 {
            planes[c][i] = out[c] as f32;
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        colorspace: target,
        planes,
    }
}

fn pad_planes<T: Copy>(planes: &[Vec<T>; 3], w: usize, h: usize) -> (usize, usize, [Vec<T>; 3]) {
    let pw = w.div_ceil(BLOCK) * BLOCK;
    let ph = h.div_ceil(BLOCK) * BLOCK;
    let padded = std::array::from_fn(|c| {
        let mut out = Vec::with_capacity(pw * ph);
        for y in 0..ph {
            let row = &planes[c][y.min(h - 1) * w..y.min(h - 1) * w + w];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[w - 1], pw - w));
        }
        out
    });
    (pw, ph, padded)
}

/// Rounds dimensions up to multiples of 8 by edge replication.
pub fn pad_to_block_multiple(img: &RasterImage) -> RasterImage {
    let (width, height, planes) = pad_planes(&img.planes, img.width, img.height);
    RasterImage {
        width,
        height,
        colorspace: img.colorspace,
        planes,
    }
}

/// Byte-image counterpart of [`pad_to_block_multiple`].
pub fn pad_bytes_to_block_multiple(img: &ByteImage) -> ByteImage {
    let (width, height, planes) = pad_planes(&img.planes, img.width, img.height);
    ByteImage {
        width,
        height,
        colorspace: img.colorspace,
        planes,
    }
}

/// One 8×8 tile, three channels, row-major within each channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Block8 {
    pub samples: [[u8; BLOCK * BLOCK]; 3],
}

impl Block8 {
    pub fn constant(v: u8) -> Self {
        Self {
            samples: [[v; BLOCK * BLOCK]; 3],
        }
    }
}

/// 24×24 window around block `(bx, by)` made of the block and its eight
/// neighbours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Context24 {
    pub samples: [[u8; CONTEXT * CONTEXT]; 3],
    pub bx: usize,
    pub by: usize,
}

impl Context24 {
    pub fn uniform(v: u8, bx: usize, by: usize) -> Self {
        Self {
            samples: [[v; CONTEXT * CONTEXT]; 3],
            bx,
            by,
        }
    }

    /// The sub-block at grid offset `(gx, gy)`, each in `0..3`; `(1, 1)` is the centre.
    pub fn sub_block(&self, gx: usize, gy: usize) -> Block8 {
        let mut b = Block8::constant(0);
        for c in 0..3 {
            for y in 0..BLOCK {
                let src = (gy * BLOCK + y) * CONTEXT + gx * BLOCK;
                b.samples[c][y * BLOCK..(y + 1) * BLOCK]
                    .copy_from_slice(&self.samples[c][src..src + BLOCK]);
            }
        }
        b
    }

    pub fn set_sub_block(&mut self, gx: usize, gy: usize, block: &Block8) {
        for c in 0..3 {
            for y in 0..BLOCK {
                let dst = (gy * BLOCK + y) * CONTEXT + gx * BLOCK;
                self.samples[c][dst..dst + BLOCK]
                    .copy_from_slice(&block.samples[c][y * BLOCK..(y + 1) * BLOCK]);
            }
        }
    }

    pub fn center(&self) -> Block8 {
        self.sub_block(1, 1)
    }
}

fn check_block(img: &ByteImage, bx: usize, by: usize) -> Result<(), ImageError> {
    let (grid_w, grid_h) = img.block_grid();
    if bx >= grid_w || by >= grid_h {
        return Err(ImageError::BlockOutOfRange {
            bx,
            by,
            grid_w,
            grid_h,
        });
    }
    Ok(())
}

/// Block `(bx, by)`; pixels past the image edge replicate the edge.
pub fn extract_block(img: &ByteImage, bx: usize, by: usize) -> Result<Block8, ImageError> {
    check_block(img, bx, by)?;
    let mut b = Block8::constant(0);
    for c in 0..3 {
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                b.samples[c][y * BLOCK + x] =
                    img.sample_clamped(c, (bx * BLOCK + x) as isize, (by * BLOCK + y) as isize);
            }
        }
    }
    Ok(b)
}

/// 24×24 window centred on block `(bx, by)`, edge-replicated outside the image.
pub fn extract_context(img: &ByteImage, bx: usize, by: usize) -> Result<Context24, ImageError> {
    check_block(img, bx, by)?;
    let mut ctx = Context24::uniform(0, bx, by);
    let x0 = (bx * BLOCK) as isize - BLOCK as isize;
    let y0 = (by * BLOCK) as isize - BLOCK as isize;
    for c in 0..3 {
        for y in 0..CONTEXT {
            for x in 0..CONTEXT {
                ctx.samples[c][y * CONTEXT + x] =
                    img.sample_clamped(c, x0 + x as isize, y0 + y as isize);
            }
        }
    }
    Ok(ctx)
}

/// Row-major grid of blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub blocks: Vec<Block8>,
}

impl BlockGrid {
    pub fn from_image(img: &ByteImage) -> Self {
        let (blocks_w, blocks_h) = img.block_grid();
        let blocks = (0..blocks_h)
            .flat_map(|by| (0..blocks_w).map(move |bx| (bx, by)))
            .map(|(bx, by)| extract_block(img, bx, by).expect("in range"))
            .collect();
        Self {
            blocks_w,
            blocks_h,
            blocks,
        }
    }
}

/// Reassembles blocks in raster order and crops to `width × height`.
pub fn assemble_blocks(
    grid: &BlockGrid,
    width: usize,
    height: usize,
    colorspace: ColorSpace,
) -> Result<ByteImage, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Dimension("empty output".into()));
    }
    if grid.blocks_w != width.div_ceil(BLOCK)
        || grid.blocks_h != height.div_ceil(BLOCK)
        || grid.blocks.len() != grid.blocks_w * grid.blocks_h
    {
        return Err(ImageError::Dimension(format!(
            "{}x{} block grid ({} blocks) cannot cover {width}x{height}",
            grid.blocks_w,
            grid.blocks_h,
            grid.blocks.len()
        )));
    }
    let mut img = ByteImage::filled(width, height, colorspace, [0; 3]);
    for (i, block) in grid.blocks.iter().enumerate() {
        let (bx, by) = (i % grid.blocks_w, i / grid.blocks_w);
        for c in 0..3 {
            for y in 0..BLOCK {
                let py = by * BLOCK + y;
                if py >= height {
                    break;
                }
                for x in 0..BLOCK {
                    let px = bx * BLOCK + x;
                    if px >= width {
                        break;
                    }
                    img.planes[c][py * width + px] = block.samples[c][y * BLOCK + x];
                }
            }
        }
    }
    Ok(img)
}
