//! Post-decode artifact removal: every block is replaced by the AR network's
//! output for its context. Contexts are read from the input image only, so
//! blocks are independent and processed in parallel.

use crate::image::{
    assemble_blocks, convert_colorspace, extract_context, BlockGrid, ByteImage, ColorSpace,
    RasterImage,
};
use crate::model::{BlockCnn, ModelError, Variant};

/// Enhances a byte image in the model's colorspace.
pub fn enhance_bytes(img: &ByteImage, model: &BlockCnn) -> Result<ByteImage, ModelError> {
    let cfg = model.config();
    if cfg.variant != Variant::Ar {
        return Err(ModelError::Variant {
            expected: Variant::Ar,
            actual: cfg.variant,
        });
    }
    if img.colorspace != cfg.colorspace {
        return Err(ModelError::Config(format!(
            "model works in {:?}, image is {:?}",
            cfg.colorspace, img.colorspace
        )));
    }
    let (bw, bh) = img.block_grid();
    let ctxs = (0..bh)
        .flat_map(|by| (0..bw).map(move |bx| (bx, by)))
        .map(|(bx, by)| extract_context(img, bx, by))
        .collect::<Result<Vec<_>, _>>()?;
    let blocks = model.infer_ar_batch(&ctxs)?;
    let grid = BlockGrid {
        blocks_w: bw,
        blocks_h: bh,
        blocks,
    };
    Ok(assemble_blocks(&grid, img.width, img.height, img.colorspace)?)
}

/// Enhances an image in any colorspace; the result is RGB.
pub fn enhance_image(img: &RasterImage, model: &BlockCnn) -> Result<RasterImage, ModelError> {
    let bytes = ByteImage::from_raster(&convert_colorspace(img, model.config().colorspace));
    let out = enhance_bytes(&bytes, model)?;
    Ok(convert_colorspace(&out.to_raster(), ColorSpace::Rgb))
}
