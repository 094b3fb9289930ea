//! Scene dataset file.
//!
//! Layout (little-endian, see docs/format.md):
//!   magic "ICMS" | version u32 | scene count u32 | key_frame_spacing f64
//!   then per scene: record byte length u64 | record
//!
//! Each record serializes seed, ADV pose, actors (id, class, size, poses),
//! map polygons and the simulated sweeps. All numbers are f64 unless noted.

use super::{ActorClass, ActorTrack, Scene, SceneSet};
use crate::error::{Error, Result};
use crate::geom::{ConvexPolygon, Pose2};
use crate::raster::{MapLayer, MapPolygon, Sweep};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"ICMS";
pub const VERSION: u32 = 1;

pub fn write_dataset(set: &SceneSet, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(set.scenes.len() as u32).to_le_bytes())?;
    f.write_all(&set.key_frame_spacing.to_le_bytes())?;
    for scene in &set.scenes {
        let rec = encode_scene(scene);
        f.write_all(&(rec.len() as u64).to_le_bytes())?;
        f.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<SceneSet> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Format("dataset truncated before magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut f)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut f)? as usize;
    let key_frame_spacing = read_f64(&mut f)?;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let len = read_u64(&mut f)? as usize;
        let mut rec = vec![0u8; len];
        f.read_exact(&mut rec)
            .map_err(|_| Error::Format(format!("dataset truncated inside scene {i}")))?;
        scenes.push(decode_scene(&rec)?);
    }
    Ok(SceneSet {
        scenes,
        key_frame_spacing,
    })
}

fn encode_scene(scene: &Scene) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(scene.rng_seed.to_le_bytes());
    put_pose(&mut b, &scene.adv_pose);
    b.extend((scene.actors.len() as u32).to_le_bytes());
    for a in &scene.actors {
        b.extend(a.id.to_le_bytes());
        b.push(match a.class {
            ActorClass::Vehicle => 0,
            ActorClass::StaticNonVehicle => 1,
        });
        b.extend(a.width.to_le_bytes());
        b.extend(a.length.to_le_bytes());
        b.extend((a.poses.len() as u32).to_le_bytes());
        for p in &a.poses {
            put_pose(&mut b, p);
        }
    }
    b.extend((scene.map_polygons.len() as u32).to_le_bytes());
    for mp in &scene.map_polygons {
        b.push(mp.layer.index() as u8);
        let vs = mp.polygon.vertices();
        b.extend((vs.len() as u32).to_le_bytes());
        for &(x, y) in vs {
            b.extend(x.to_le_bytes());
            b.extend(y.to_le_bytes());
        }
    }
    b.extend((scene.sweeps.len() as u32).to_le_bytes());
    for s in &scene.sweeps {
        b.extend((s.points.len() as u32).to_le_bytes());
        for &(x, y, z) in &s.points {
            b.extend(x.to_le_bytes());
            b.extend(y.to_le_bytes());
            b.extend(z.to_le_bytes());
        }
    }
    b
}

fn decode_scene(rec: &[u8]) -> Result<Scene> {
    let mut cur = std::io::Cursor::new(rec);
    let rng_seed = read_u64(&mut cur)?;
    let adv_pose = get_pose(&mut cur)?;
    let n_actors = read_u32(&mut cur)? as usize;
    let mut actors = Vec::with_capacity(n_actors);
    for _ in 0..n_actors {
        let id = read_u32(&mut cur)?;
        let class = match read_u8(&mut cur)? {
            0 => ActorClass::Vehicle,
            1 => ActorClass::StaticNonVehicle,
            other => return Err(Error::Format(format!("unknown actor class tag {other}"))),
        };
        let width = read_f64(&mut cur)?;
        let length = read_f64(&mut cur)?;
        let n_poses = read_u32(&mut cur)? as usize;
        let mut poses = Vec::with_capacity(n_poses);
        for _ in 0..n_poses {
            poses.push(get_pose(&mut cur)?);
        }
        actors.push(ActorTrack {
            id,
            class,
            width,
            length,
            poses,
        });
    }
    let n_polys = read_u32(&mut cur)? as usize;
    let mut map_polygons = Vec::with_capacity(n_polys);
    for _ in 0..n_polys {
        let layer = match read_u8(&mut cur)? {
            0 => MapLayer::DrivableArea,
            1 => MapLayer::LaneCorridor,
            2 => MapLayer::StaticZone,
            other => return Err(Error::Format(format!("unknown map layer tag {other}"))),
        };
        let n_verts = read_u32(&mut cur)? as usize;
        let mut verts = Vec::with_capacity(n_verts);
        for _ in 0..n_verts {
            let x = read_f64(&mut cur)?;
            let y = read_f64(&mut cur)?;
            verts.push((x, y));
        }
        map_polygons.push(MapPolygon {
            layer,
            polygon: ConvexPolygon::new(verts),
        });
    }
    let n_sweeps = read_u32(&mut cur)? as usize;
    let mut sweeps = Vec::with_capacity(n_sweeps);
    for _ in 0..n_sweeps {
        let n_pts = read_u32(&mut cur)? as usize;
        let mut points = Vec::with_capacity(n_pts);
        for _ in 0..n_pts {
            let x = read_f64(&mut cur)?;
            let y = read_f64(&mut cur)?;
            let z = read_f64(&mut cur)?;
            points.push((x, y, z));
        }
        sweeps.push(Sweep { points });
    }
    Ok(Scene {
        actors,
        map_polygons,
        adv_pose,
        rng_seed,
        sweeps,
    })
}

fn put_pose(b: &mut Vec<u8>, p: &Pose2) {
    b.extend(p.x.to_le_bytes());
    b.extend(p.y.to_le_bytes());
    b.extend(p.cos_h.to_le_bytes());
    b.extend(p.sin_h.to_le_bytes());
}

fn get_pose(f: &mut impl Read) -> Result<Pose2> {
    Ok(Pose2 {
        x: read_f64(f)?,
        y: read_f64(f)?,
        cos_h: read_f64(f)?,
        sin_h: read_f64(f)?,
    })
}

fn read_u8(f: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("dataset truncated".into()))?;
    Ok(b[0])
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("dataset truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("dataset truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(f: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("dataset truncated".into()))?;
    Ok(f64::from_le_bytes(b))
}
