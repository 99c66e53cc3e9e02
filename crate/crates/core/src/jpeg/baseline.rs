//! Plain baseline JPEG scan of a three-channel byte image: level shift by
//! 128, DCT, quantization, Huffman coding. No markers or headers; width,
//! height and quality travel out of band.

use super::{
    build_quant_tables, dequantize_block, entropy_decode_block, entropy_encode_block, fdct_8x8,
    idct_8x8, quantize_block, to_byte, BitReader, BitWriter, ChannelClass, JpegError, QuantTable,
};
use crate::image::{assemble_blocks, Block8, BlockGrid, ByteImage, ColorSpace, BLOCK};

fn tables_for(quality: u8) -> Result<[QuantTable; 3], JpegError> {
    let (luma, chroma) = build_quant_tables(quality)?;
    Ok([luma, chroma.clone(), chroma])
}

/// Encodes every block (edge-replicated to whole blocks) in raster order,
/// channels 0, 1, 2 within each block.
pub fn encode(img: &ByteImage, quality: u8) -> Result<Vec<u8>, JpegError> {
    let tables = tables_for(quality)?;
    let grid = BlockGrid::from_image(img);
    let mut out = BitWriter::new();
    let mut preds = [0i32; 3];
    for block in &grid.blocks {
        for c in 0..3 {
            let shifted: [f64; 64] = std::array::from_fn(|i| block.samples[c][i] as f64 - 128.0);
            let cb = quantize_block(&fdct_8x8(&shifted), &tables[c]);
            preds[c] = entropy_encode_block(&cb, preds[c], ChannelClass::of_channel(c), &mut out);
        }
    }
    Ok(out.finish())
}

/// Inverse of [`encode`] for an image of the given size.
pub fn decode(
    scan: &[u8],
    width: usize,
    height: usize,
    quality: u8,
    colorspace: ColorSpace,
) -> Result<ByteImage, JpegError> {
    let tables = tables_for(quality)?;
    let (bw, bh) = (width.div_ceil(BLOCK), height.div_ceil(BLOCK));
    let mut input = BitReader::new(scan);
    let mut preds = [0i32; 3];
    let mut blocks = Vec::with_capacity(bw * bh);
    for _ in 0..bw * bh {
        let mut block = Block8::constant(0);
        for c in 0..3 {
            let (cb, p) = entropy_decode_block(&mut input, preds[c], ChannelClass::of_channel(c))?;
            preds[c] = p;
            let spatial = idct_8x8(&dequantize_block(&cb, &tables[c]));
            for (dst, v) in block.samples[c].iter_mut().zip(spatial) {
                *dst = to_byte(v + 128.0);
            }
        }
        blocks.push(block);
    }
    input.expect_padding()?;
    let grid = BlockGrid {
        blocks_w: bw,
        blocks_h: bh,
        blocks,
    };
    Ok(assemble_blocks(&grid, width, height, colorspace).expect("grid matches dimensions"))
}

/// Encode then decode; the degraded image a JPEG viewer would show.
pub fn round_trip(img: &ByteImage, quality: u8) -> Result<(ByteImage, usize), JpegError> {
    let scan = encode(img, quality)?;
    let out = decode(&scan, img.width, img.height, quality, img.colorspace)?;
    Ok((out, scan.len()))
}
