//! BEV input grid: occupancy voxels from stacked point sweeps plus
//! rasterized map layers, all in the ADV frame at the key frame.

use crate::error::{Error, Result};
use crate::geom::{into_frame, ConvexPolygon, Pose2};
use crate::tensorad::Tensor;
use serde::{Deserialize, Serialize};

/// Map layers carried as raster channels, in channel order.
pub const MAP_LAYERS: [&str; 3] = ["drivable_area", "lane_corridor", "static_zone"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapLayer {
    DrivableArea,
    LaneCorridor,
    StaticZone,
}

impl MapLayer {
    pub fn index(self) -> usize {
        match self {
            MapLayer::DrivableArea => 0,
            MapLayer::LaneCorridor => 1,
            MapLayer::StaticZone => 2,
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "drivable_area" => Ok(MapLayer::DrivableArea),
            "lane_corridor" => Ok(MapLayer::LaneCorridor),
            "static_zone" => Ok(MapLayer::StaticZone),
            other => Err(Error::Config(format!("unknown map layer tag '{other}'"))),
        }
    }
}

/// Grid geometry. `past_sweeps` is the number of past frames P; the raster
/// stacks P+1 frames total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extent_x: f64,
    pub extent_y: f64,
    pub extent_z: f64,
    pub res_xy: f64,
    pub res_z: f64,
    pub past_sweeps: usize,
}

impl GridSpec {
    /// Desk-scale default: 240×160×8 cells over 60×40×3.2 m.
    pub fn desk_default() -> Self {
        Self {
            extent_x: 60.0,
            extent_y: 40.0,
            extent_z: 3.2,
            res_xy: 0.25,
            res_z: 0.4,
            past_sweeps: 9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = |extent: f64, res: f64| (extent / res - (extent / res).round()).abs() < 1e-9;
        if !div(self.extent_x, self.res_xy)
            || !div(self.extent_y, self.res_xy)
            || !div(self.extent_z, self.res_z)
        {
            return Err(Error::Config(format!(
                "grid extents must be divisible by resolutions: {self:?}"
            )));
        }
        if self.past_sweeps < 1 {
            return Err(Error::Config("past_sweeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Grid width in cells (x direction / columns).
    pub fn width(&self) -> usize {
        (self.extent_x / self.res_xy).round() as usize
    }

    /// Grid height in cells (y direction / rows).
    pub fn height(&self) -> usize {
        (self.extent_y / self.res_xy).round() as usize
    }

    pub fn z_bins(&self) -> usize {
        (self.extent_z / self.res_z).round() as usize
    }

    pub fn frames(&self) -> usize {
        self.past_sweeps + 1
    }

    pub fn occupancy_channels(&self) -> usize {
        self.frames() * self.z_bins()
    }

    pub fn total_channels(&self) -> usize {
        self.occupancy_channels() + MAP_LAYERS.len()
    }

    /// Continuous ADV-frame position of a cell center.
    pub fn cell_to_world(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.res_xy - self.extent_x * 0.5,
            (row as f64 + 0.5) * self.res_xy - self.extent_y * 0.5,
        )
    }

    /// Cell containing an ADV-frame position, if inside the extent.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = (x + self.extent_x * 0.5) / self.res_xy;
        let cy = (y + self.extent_y * 0.5) / self.res_xy;
        if cx < 0.0 || cy < 0.0 {
            return None;
        }
        let (col, row) = (cx.floor() as usize, cy.floor() as usize);
        if col >= self.width() || row >= self.height() {
            return None;
        }
        Some((row, col))
    }

    /// Continuous (row, col) cell coordinates of an ADV-frame point, where
    /// integer values land on cell centers. Used for feature-map sampling.
    pub fn world_to_cell_continuous(&self, x: f64, y: f64, downsample: f64) -> (f64, f64) {
        let res = self.res_xy * downsample;
        (
            (y + self.extent_y * 0.5) / res - 0.5,
            (x + self.extent_x * 0.5) / res - 0.5,
        )
    }
}

/// One LiDAR-like sweep: points in the ADV frame at the key frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<(f64, f64, f64)>,
}

/// Tagged convex polygon from the scene map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolygon {
    pub layer: MapLayer,
    pub polygon: ConvexPolygon,
}

/// Stacked raster: (P+1)·Z binary occupancy channels then the map layers.
pub struct BevRaster {
    pub channels: Tensor,
    pub spec: GridSpec,
}

/// Binary-occupancy voxelization of the sweep stack, oldest sweep first.
/// Points outside the extent are dropped; duplicate hits stay 1.
pub fn voxelize(sweeps: &[Sweep], spec: &GridSpec) -> Vec<f64> {
    assert_eq!(
        sweeps.len(),
        spec.frames(),
        "expected {} sweeps ({} past + current), got {}",
        spec.frames(),
        spec.past_sweeps,
        sweeps.len()
    );
    let (h, w, zb) = (spec.height(), spec.width(), spec.z_bins());
    let mut out = vec![0.0; spec.occupancy_channels() * h * w];
    for (fi, sweep) in sweeps.iter().enumerate() {
        for &(x, y, z) in &sweep.points {
            let Some((row, col)) = spec.world_to_cell(x, y) else {
                continue;
            };
            if z < 0.0 || z >= spec.extent_z {
                continue;
            }
            let zi = (z / spec.res_z).floor() as usize;
            if zi >= zb {
                continue;
            }
            let ch = fi * zb + zi;
            out[(ch * h + row) * w + col] = 1.0;
        }
    }
    out
}

/// Cell-center coverage rasterization of the tagged map polygons
/// (1 where the cell center is inside, else 0), one channel per layer.
pub fn rasterize_map(map: &[MapPolygon], spec: &GridSpec) -> Vec<f64> {
    let (h, w) = (spec.height(), spec.width());
    let mut out = vec![0.0; MAP_LAYERS.len() * h * w];
    for poly in map {
        let li = poly.layer.index();
        let ((minx, miny), (maxx, maxy)) = poly.polygon.axis_aligned_bounds();
        for row in 0..h {
            for col in 0..w {
                let (x, y) = spec.cell_to_world(row, col);
                if x < minx || x > maxx || y < miny || y > maxy {
                    continue;
                }
                if poly.polygon.contains((x, y)) {
                    out[(li * h + row) * w + col] = 1.0;
                }
            }
        }
    }
    out
}

/// Assemble the full input raster for one scene snapshot.
pub fn build_raster(sweeps: &[Sweep], map: &[MapPolygon], spec: &GridSpec) -> BevRaster {
    let (h, w) = (spec.height(), spec.width());
    let mut data = voxelize(sweeps, spec);
    data.extend(rasterize_map(map, spec));
    BevRaster {
        channels: Tensor::from_vec(&[spec.total_channels(), h, w], data),
        spec: *spec,
    }
}

/// Express world-frame sweeps in the ADV frame (applied before voxelizing).
pub fn sweeps_into_adv_frame(sweeps: &[Sweep], adv: &Pose2) -> Vec<Sweep> {
    sweeps
        .iter()
        .map(|s| Sweep {
            points: s
                .points
                .iter()
                .map(|&(x, y, z)| {
                    let (lx, ly) = into_frame((x, y), adv);
                    (lx, ly, z)
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GridSpec {
        GridSpec {
            extent_x: 8.0,
            extent_y: 4.0,
            extent_z: 2.0,
            res_xy: 0.5,
            res_z: 1.0,
            past_sweeps: 1,
        }
    }

    #[test]
    fn empty_sweeps_zero_raster() {
        let spec = small_spec();
        let sweeps = vec![Sweep::default(), Sweep::default()];
        let v = voxelize(&sweeps, &spec);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_point_single_voxel() {
        let spec = small_spec();
        let sweeps = vec![
            Sweep::default(),
            Sweep {
                points: vec![(0.0, 0.0, 0.5)],
            },
        ];
        let v = voxelize(&sweeps, &spec);
        let nonzero: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero.len(), 1);
        // Frame 1 (current), z-bin 0, center cell (row 4, col 8).
        let (h, w) = (spec.height(), spec.width());
        let ch = 1 * spec.z_bins();
        assert_eq!(nonzero[0], (ch * h + 4) * w + 8);
    }

    #[test]
    fn duplicate_points_stay_binary() {
        let spec = small_spec();
        let sweeps = vec![
            Sweep::default(),
            Sweep {
                points: vec![(1.1, 0.1, 0.5), (1.12, 0.13, 0.6)],
            },
        ];
        let v = voxelize(&sweeps, &spec);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn out_of_extent_points_dropped() {
        let spec = small_spec();
        let sweeps = vec![
            Sweep::default(),
            Sweep {
                points: vec![(100.0, 0.0, 0.5), (0.0, 0.0, 5.0), (0.0, 0.0, -0.1)],
            },
        ];
        let v = voxelize(&sweeps, &spec);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn map_full_cover_and_empty() {
        let spec = small_spec();
        let all = MapPolygon {
            layer: MapLayer::DrivableArea,
            polygon: ConvexPolygon::new(vec![
                (-10.0, -10.0),
                (10.0, -10.0),
                (10.0, 10.0),
                (-10.0, 10.0),
            ]),
        };
        let v = rasterize_map(&[all], &spec);
        let hw = spec.height() * spec.width();
        assert!(v[..hw].iter().all(|&x| x == 1.0));
        assert!(v[hw..].iter().all(|&x| x == 0.0));
        let empty = rasterize_map(&[], &spec);
        assert!(empty.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn half_plane_polygon_matches_center_test() {
        let spec = small_spec();
        // Half plane x >= 0.25 realized as a big rectangle.
        let half = MapPolygon {
            layer: MapLayer::LaneCorridor,
            polygon: ConvexPolygon::new(vec![
                (0.25, -50.0),
                (50.0, -50.0),
                (50.0, 50.0),
                (0.25, 50.0),
            ]),
        };
        let v = rasterize_map(&[half], &spec);
        let (h, w) = (spec.height(), spec.width());
        let hw = h * w;
        for row in 0..h {
            for col in 0..w {
                let (x, _) = spec.cell_to_world(row, col);
                let want = if x >= 0.25 { 1.0 } else { 0.0 };
                assert_eq!(v[hw + row * w + col], want, "cell ({row},{col}) x={x}");
            }
        }
    }

    #[test]
    fn cell_round_trip_within_half_cell() {
        let spec = small_spec();
        for &(x, y) in &[(0.0, 0.0), (-3.9, 1.9), (3.7, -1.2), (0.26, 0.24)] {
            let (row, col) = spec.world_to_cell(x, y).unwrap();
            let (cx, cy) = spec.cell_to_world(row, col);
            assert!((cx - x).abs() <= spec.res_xy * 0.5 + 1e-12);
            assert!((cy - y).abs() <= spec.res_xy * 0.5 + 1e-12);
        }
    }

    #[test]
    fn rotated_scene_equals_rotated_raster() {
        let spec = small_spec();
        let pts = vec![(1.3, 0.7, 0.5), (-2.1, -1.4, 1.5), (3.3, 1.9, 0.2)];
        let sweeps = vec![Sweep { points: pts.clone() }, Sweep { points: pts.clone() }];
        let a = voxelize(&sweeps, &spec);
        // Rotate every point 180° about the origin (= grid center).
        let rot: Vec<Sweep> = sweeps
            .iter()
            .map(|s| Sweep {
                points: s.points.iter().map(|&(x, y, z)| (-x, -y, z)).collect(),
            })
            .collect();
        let b = voxelize(&rot, &spec);
        let (h, w) = (spec.height(), spec.width());
        for ch in 0..spec.occupancy_channels() {
            for row in 0..h {
                for col in 0..w {
                    let flipped = b[(ch * h + (h - 1 - row)) * w + (w - 1 - col)];
                    assert_eq!(a[(ch * h + row) * w + col], flipped);
                }
            }
        }
    }

    #[test]
    fn paper_scale_spec_constructible() {
        let spec = GridSpec {
            extent_x: 150.0,
            extent_y: 100.0,
            extent_z: 3.2,
            res_xy: 0.15625,
            res_z: 0.2,
            past_sweeps: 9,
        };
        spec.validate().unwrap();
        assert_eq!(spec.width(), 960);
        assert_eq!(spec.height(), 640);
        assert_eq!(spec.z_bins(), 16);
        assert_eq!(spec.frames(), 10);
    }

    #[test]
    fn unknown_layer_tag_rejected() {
        assert!(MapLayer::from_tag("lava").is_err());
    }

    #[test]
    fn adv_frame_transform() {
        let adv = Pose2::new(1.0, 0.0, std::f64::consts::FRAC_PI_2);
        let sweeps = vec![Sweep {
            points: vec![(2.0, 0.0, 0.3)],
        }];
        let local = sweeps_into_adv_frame(&sweeps, &adv);
        let (x, y, z) = local[0].points[0];
        assert!((x - 0.0).abs() < 1e-12);
        assert!((y + 1.0).abs() < 1e-12);
        assert!((z - 0.3).abs() < 1e-12);
    }
}
