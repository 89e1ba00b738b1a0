//! Square tile grids over an image, annotation projection into tiles, and
//! padded pixel extraction.
//!
//! A grid covers the image with `cols x rows` squares of one side length,
//! anchored at the top-left corner. The last column and row extend past the
//! image; that region is black padding. Tiles never overlap.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, BBox};

/// Default share of a box's area that must fall inside a tile to keep it there.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.6;

#[derive(Debug, Error)]
pub enum TilingError {
    #[error("nonpositive dimension: width {width}, height {height}, side {side}")]
    Dimension { width: u32, height: u32, side: u32 },
    #[error("tiling scale {0} outside (0, 1]")]
    Scale(f64),
    #[error("keep fraction {0} outside (0.5, 1]")]
    KeepFraction(f64),
    #[error("annotation '{annotation}' belongs to image '{found}', grid is for '{expected}'")]
    ForeignAnnotation {
        annotation: String,
        expected: String,
        found: String,
    },
    #[error("box [{}, {}, {}, {}] is outside the {side}px tile square", .bbox.x, .bbox.y, .bbox.w, .bbox.h)]
    OutsideTile { bbox: BBox, side: u32 },
    #[error("tile r{row} c{col} is not part of a {cols}x{rows} grid")]
    TileOutOfGrid { row: u32, col: u32, cols: u32, rows: u32 },
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How tile sides are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileSpec {
    /// Constant side in pixels.
    Fixed { side: u32 },
    /// Side is `ceil(min(width, height) * scale)`.
    Scaled { scale: f64 },
}

impl TileSpec {
    pub fn grid(&self, image_id: &str, width: u32, height: u32) -> Result<TileGrid, TilingError> {
        match *self {
            TileSpec::Fixed { side } => grid_fixed(image_id, width, height, side),
            TileSpec::Scaled { scale } => grid_scaled(image_id, width, height, scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub side: u32,
    pub cols: u32,
    pub rows: u32,
    pub pad_right: u32,
    pub pad_bottom: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    pub origin_x: u32,
    pub origin_y: u32,
    pub side: u32,
}

impl Tile {
    pub fn rect(&self) -> BBox {
        BBox::new(
            f64::from(self.origin_x),
            f64::from(self.origin_y),
            f64::from(self.side),
            f64::from(self.side),
        )
    }
}

/// Boxes retained by one tile, in tile-local coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileAnnotations {
    pub tile: Tile,
    pub boxes: Vec<BBox>,
    pub source_ids: Vec<String>,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile(&self, row: u32, col: u32) -> Result<Tile, TilingError> {
        if row >= self.rows || col >= self.cols {
            return Err(TilingError::TileOutOfGrid {
                row,
                col,
                cols: self.cols,
                rows: self.rows,
            });
        }
        Ok(Tile {
            row,
            col,
            origin_x: col * self.side,
            origin_y: row * self.side,
            side: self.side,
        })
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.rows).flat_map(move |row| {
            (0..self.cols).map(move |col| Tile {
                row,
                col,
                origin_x: col * self.side,
                origin_y: row * self.side,
                side: self.side,
            })
        })
    }
}

pub fn grid_fixed(image_id: &str, width: u32, height: u32, side: u32) -> Result<TileGrid, TilingError> {
    if width == 0 || height == 0 || side == 0 {
        return Err(TilingError::Dimension { width, height, side });
    }
    let cols = width.div_ceil(side);
    let rows = height.div_ceil(side);
    Ok(TileGrid {
        image_id: image_id.to_string(),
        width,
        height,
        side,
        cols,
        rows,
        pad_right: cols * side - width,
        pad_bottom: rows * side - height,
    })
}

/// Side length for a scale-factor grid.
///
/// The product is nudged down by 1e-6 px before `ceil` so that scales carrying
/// float noise (0.25000000000000006) do not add a pixel.
pub fn scaled_side(width: u32, height: u32, scale: f64) -> Result<u32, TilingError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(TilingError::Scale(scale));
    }
    let shorter = f64::from(width.min(height));
    Ok(((shorter * scale - 1e-6).ceil() as u32).max(1))
}

pub fn grid_scaled(image_id: &str, width: u32, height: u32, scale: f64) -> Result<TileGrid, TilingError> {
    if width == 0 || height == 0 {
        return Err(TilingError::Dimension { width, height, side: 0 });
    }
    let side = scaled_side(width, height, scale)?;
    grid_fixed(image_id, width, height, side)
}

/// Assign each annotation to at most one tile under the retention rule.
///
/// A box is kept in a tile when `intersection / area >= keep_fraction`; the kept
/// copy is clipped to the tile and shifted to tile-local coordinates. Returns one
/// entry per tile in row-major order, including tiles with no boxes.
pub fn project_annotations(
    annotations: &[Annotation],
    grid: &TileGrid,
    keep_fraction: f64,
) -> Result<Vec<TileAnnotations>, TilingError> {
    if !(keep_fraction > 0.5 && keep_fraction <= 1.0) {
        return Err(TilingError::KeepFraction(keep_fraction));
    }
    let mut out: Vec<TileAnnotations> = grid
        .tiles()
        .map(|tile| TileAnnotations {
            tile,
            boxes: Vec::new(),
            source_ids: Vec::new(),
        })
        .collect();

    let side = f64::from(grid.side);
    let mut oversize = 0usize;
    for ann in annotations {
        if ann.image_id != grid.image_id {
            return Err(TilingError::ForeignAnnotation {
                annotation: ann.id.clone(),
                expected: grid.image_id.clone(),
                found: ann.image_id.clone(),
            });
        }
        let b = ann.bbox;
        let area = b.area();
        if area <= 0.0 {
            continue;
        }
        if area * keep_fraction > side * side {
            oversize += 1;
            continue;
        }
        let c0 = ((b.x / side).floor().max(0.0) as u32).min(grid.cols - 1);
        let c1 = (((b.right() / side).ceil() as u32).saturating_sub(1)).min(grid.cols - 1);
        let r0 = ((b.y / side).floor().max(0.0) as u32).min(grid.rows - 1);
        let r1 = (((b.bottom() / side).ceil() as u32).saturating_sub(1)).min(grid.rows - 1);
        'search: for row in r0..=r1 {
            for col in c0..=c1 {
                let idx = (row * grid.cols + col) as usize;
                let rect = out[idx].tile.rect();
                let Some(inter) = b.intersection(&rect) else {
                    continue;
                };
                // ties at exactly keep_fraction are kept
                if inter.area() >= keep_fraction * area * (1.0 - 1e-12) {
                    let entry = &mut out[idx];
                    entry.boxes.push(inter.translate(-rect.x, -rect.y));
                    entry.source_ids.push(ann.id.clone());
                    break 'search;
                }
            }
        }
    }
    if oversize > 0 {
        log::warn!(
            "image {}: {oversize} box(es) larger than the {}px tile can never be retained",
            grid.image_id,
            grid.side
        );
    }
    Ok(out)
}

fn check_in_tile(tile: &Tile, b: &BBox) -> Result<(), TilingError> {
    let side = f64::from(tile.side);
    if b.within(side, side) {
        Ok(())
    } else {
        Err(TilingError::OutsideTile {
            bbox: *b,
            side: tile.side,
        })
    }
}

/// Translate a tile-local box into image coordinates.
pub fn tile_to_global(tile: &Tile, b: &BBox) -> Result<BBox, TilingError> {
    check_in_tile(tile, b)?;
    Ok(b.translate(f64::from(tile.origin_x), f64::from(tile.origin_y)))
}

/// Translate an image-coordinate box into the tile's frame. The box must lie
/// inside the tile square.
pub fn global_to_tile(tile: &Tile, b: &BBox) -> Result<BBox, TilingError> {
    let local = b.translate(-f64::from(tile.origin_x), -f64::from(tile.origin_y));
    check_in_tile(tile, &local)?;
    Ok(local)
}

pub fn load_raster(path: &Path) -> Result<RgbImage, TilingError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| TilingError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Copy the tile's square out of `image`; anything past the image edge is black.
pub fn extract_tile_pixels(image: &RgbImage, tile: &Tile) -> RgbImage {
    let mut out = RgbImage::from_pixel(tile.side, tile.side, Rgb([0, 0, 0]));
    let x_end = image.width().min(tile.origin_x.saturating_add(tile.side));
    let y_end = image.height().min(tile.origin_y.saturating_add(tile.side));
    for y in tile.origin_y..y_end {
        for x in tile.origin_x..x_end {
            out.put_pixel(x - tile.origin_x, y - tile.origin_y, *image.get_pixel(x, y));
        }
    }
    out
}

/// File name used for dumped tiles and for adapter tile paths.
pub fn tile_file_name(image_id: &str, tile: &Tile) -> String {
    format!("{}_r{}_c{}.png", file_safe(image_id), tile.row, tile.col)
}

pub fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write every tile of `grid` as PNG plus a `{image_id}_tiles.json` sidecar
/// holding the projected annotations. Returns the written paths.
pub fn dump_tiles(
    image: &RgbImage,
    grid: &TileGrid,
    projected: &[TileAnnotations],
    dir: &Path,
) -> Result<Vec<PathBuf>, TilingError> {
    fs::create_dir_all(dir).map_err(|source| TilingError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(grid.len() + 1);
    for tile in grid.tiles() {
        let path = dir.join(tile_file_name(&grid.image_id, &tile));
        extract_tile_pixels(image, &tile)
            .save(&path)
            .map_err(|source| TilingError::Image {
                path: path.clone(),
                source,
            })?;
        written.push(path);
    }
    let sidecar = dir.join(format!("{}_tiles.json", file_safe(&grid.image_id)));
    let text = serde_json::to_string_pretty(projected).expect("serializable");
    fs::write(&sidecar, text + "\n").map_err(|source| TilingError::Io {
        path: sidecar.clone(),
        source,
    })?;
    written.push(sidecar);
    Ok(written)
}
