use crate::error::{Error, Result};

/// Physical PE array: `tiles` tiles of `tile_width` lanes each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrayGeometry {
    pub tiles: usize,
    pub tile_width: usize,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            tiles: 32,
            tile_width: 13,
        }
    }
}

impl ArrayGeometry {
    pub fn lanes(&self) -> usize {
        self.tiles * self.tile_width
    }
}

/// The tiles combined into `groups` independent lines of `group_width`
/// lanes. Each group computes its own output channels on the same input
/// rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileArrangement {
    pub groups: usize,
    pub group_width: usize,
}

impl TileArrangement {
    pub fn new(groups: usize, geometry: ArrayGeometry) -> Result<Self> {
        if groups == 0 || !groups.is_power_of_two() || !geometry.tiles.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "{groups} groups cannot split {} tiles evenly",
                geometry.tiles
            )));
        }
        Ok(Self {
            groups,
            group_width: geometry.lanes() / groups,
        })
    }

    /// Output channel `o` runs on group `o % groups`.
    #[inline]
    pub fn group_of(&self, o: usize) -> usize {
        o % self.groups
    }

    pub fn channels_of(&self, group: usize, o_dim: usize) -> impl Iterator<Item = usize> {
        (group..o_dim).step_by(self.groups)
    }
}

/// Narrowest group width that holds a `line_width`-pixel row on the
/// default 32x13 array.
pub fn arrange_tiles(line_width: usize) -> Result<TileArrangement> {
    arrange_tiles_on(line_width, ArrayGeometry::default())
}

pub fn arrange_tiles_on(line_width: usize, geometry: ArrayGeometry) -> Result<TileArrangement> {
    if line_width == 0 {
        return Err(Error::config("line width must be positive"));
    }
    if line_width > geometry.lanes() {
        return Err(Error::config(format!(
            "line width {line_width} exceeds the {} lanes of the array",
            geometry.lanes()
        )));
    }
    // largest power of two dividing the tile count
    let mut groups = geometry.tiles & geometry.tiles.wrapping_neg();
    loop {
        let arr = TileArrangement::new(groups, geometry)?;
        if arr.group_width >= line_width || groups == 1 {
            return Ok(arr);
        }
        groups /= 2;
    }
}
