//! Point-cloud I/O, synthetic test surfaces and controlled noise.
//!
//! Two text formats are supported:
//!
//! - **XYZ**: one point per line, three whitespace-separated decimals,
//!   `#`-prefixed comment lines ignored.
//! - **ASCII PLY**: standard header (`ply` / `format ascii 1.0` /
//!   `element vertex N` / properties / `end_header`) followed by one vertex
//!   per line. Binary PLY is rejected. Non-position vertex properties are
//!   skipped; other elements (faces etc.) are ignored.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces coordinates exactly.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// An ordered list of 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub name: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points, name: None }
    }

    pub fn with_name(points: Vec<Point3<f64>>, name: impl Into<String>) -> Self {
        Self {
            points,
            name: Some(name.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Supported on-disk cloud formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Pick a format from a file extension (`.ply` -> PLY, anything else XYZ).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Xyz,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply_ascii" => Ok(CloudFormat::PlyAscii),
            "xyz" => Ok(CloudFormat::Xyz),
            other => Err(Error::InvalidParam(format!(
                "unknown cloud format '{other}' (expected 'xyz' or 'ply')"
            ))),
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CloudFormat::PlyAscii => write!(f, "ply"),
            CloudFormat::Xyz => write!(f, "xyz"),
        }
    }
}

/// Analytic test surfaces for synthetic clouds.
///
/// - `Plane`: z = 0 over the square [-1,1]^2.
/// - `Sphere`: unit sphere centered at the origin.
/// - `Saddle`: z = (x^2 - y^2)/2 over [-1,1]^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Plane,
    Sphere,
    Saddle,
}

impl Shape {
    /// Height field of the saddle surface.
    pub fn saddle_height(x: f64, y: f64) -> f64 {
        0.5 * (x * x - y * y)
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Shape::Plane),
            "sphere" => Ok(Shape::Sphere),
            "saddle" => Ok(Shape::Saddle),
            other => Err(Error::InvalidParam(format!(
                "unknown shape '{other}' (expected 'plane', 'sphere' or 'saddle')"
            ))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Plane => write!(f, "plane"),
            Shape::Sphere => write!(f, "sphere"),
            Shape::Saddle => write!(f, "saddle"),
        }
    }
}

/// Additive isotropic Gaussian noise, seeded for reproducibility.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Per-coordinate standard deviation in world units.
    pub sigma: f64,
    pub seed: u64,
}

/// Read a point cloud from `path` in the given format.
pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut cloud = match format {
        CloudFormat::Xyz => parse_xyz(reader),
        CloudFormat::PlyAscii => parse_ply(reader),
    }?;
    cloud.name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.to_string());
    Ok(cloud)
}

/// Write a point cloud to `path` in the given format.
pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    match format {
        CloudFormat::Xyz => write_xyz(cloud, &mut writer)?,
        CloudFormat::PlyAscii => write_ply(cloud, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

fn parse_coord(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected a number, found '{tok}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite coordinate '{tok}'"),
        });
    }
    Ok(v)
}

/// Parse the XYZ format from any buffered reader.
pub fn parse_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 coordinates, found {}", toks.len()),
            });
        }
        let x = parse_coord(toks[0], lineno)?;
        let y = parse_coord(toks[1], lineno)?;
        let z = parse_coord(toks[2], lineno)?;
        points.push(Point3::new(x, y, z));
    }
    Ok(PointCloud::new(points))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

/// Parse ASCII PLY from any buffered reader.
///
/// Only vertex positions are extracted; extra scalar vertex properties and
/// non-vertex elements are skipped. List properties inside the vertex element
/// are rejected because they make the column layout ambiguous.
pub fn parse_ply<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = reader.lines().enumerate();

    let mut next_line = |ctx: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((idx, line)) => Ok((idx + 1, line?)),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file while reading {ctx}"),
            }),
        }
    };

    let (lineno, magic) = next_line("the 'ply' magic line")?;
    if magic.trim() != "ply" {
        return Err(Error::Parse {
            line: lineno,
            msg: "file does not start with 'ply'".into(),
        });
    }

    let (lineno, format_line) = next_line("the format line")?;
    let fmt = format_line.trim();
    if fmt.starts_with("format binary_little_endian") || fmt.starts_with("format binary_big_endian")
    {
        return Err(Error::UnsupportedFormat(
            "binary PLY is not supported; convert to ASCII first".into(),
        ));
    }
    if fmt != "format ascii 1.0" {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected 'format ascii 1.0', found '{fmt}'"),
        });
    }

    // Header: collect elements in declaration order.
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (lineno, line) = next_line("the header")?;
        let trimmed = line.trim();
        if trimmed == "end_header" {
            break;
        }
        let mut toks = trimmed.split_whitespace();
        match toks.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = toks.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "element declaration missing a name".into(),
                })?;
                let count: usize =
                    toks.next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::Parse {
                            line: lineno,
                            msg: format!("element '{name}' missing a valid count"),
                        })?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "property declared before any element".into(),
                })?;
                let kind = toks.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "property declaration missing a type".into(),
                })?;
                if kind == "list" {
                    element.has_list = true;
                    element.properties.push(String::new());
                } else {
                    let name = toks.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: "property declaration missing a name".into(),
                    })?;
                    element.properties.push(name.to_string());
                }
            }
            Some(other) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unrecognized header keyword '{other}'"),
                });
            }
        }
    }

    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::Parse {
            line: 0,
            msg: "header declares no 'vertex' element".into(),
        })?;
    if vertex.has_list {
        return Err(Error::UnsupportedFormat(
            "list properties in the vertex element are not supported".into(),
        ));
    }
    let col = |name: &str| -> Result<usize> {
        vertex
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("vertex element has no '{name}' property"),
            })
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let n_props = vertex.properties.len();

    // Body: elements appear in declaration order, one instance per line.
    let mut points = Vec::new();
    let mut last_line = 0usize;
    for element in &elements {
        let is_vertex = element.name == "vertex";
        for row in 0..element.count {
            let (lineno, line) = match lines.next() {
                Some((idx, line)) => (idx + 1, line?),
                None => {
                    return Err(Error::Parse {
                        line: last_line + 1,
                        msg: format!(
                            "missing row {} of {} for element '{}'",
                            row + 1,
                            element.count,
                            element.name
                        ),
                    });
                }
            };
            last_line = lineno;
            if !is_vertex {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != n_props {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} values, found {}", n_props, toks.len()),
                });
            }
            let x = parse_coord(toks[ix], lineno)?;
            let y = parse_coord(toks[iy], lineno)?;
            let z = parse_coord(toks[iz], lineno)?;
            points.push(Point3::new(x, y, z));
        }
    }
    Ok(PointCloud::new(points))
}

fn write_xyz<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Sample `n` points on an analytic surface.
///
/// Sampling is uniform in the surface parameterization (area-uniform for the
/// sphere) and fully determined by `seed` (ChaCha8). Per point the draws are:
/// plane/saddle `x` then `y`, sphere `z` then the azimuth angle.
pub fn synth_cloud(shape: Shape, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidParam("point count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let p = match shape {
            Shape::Plane => {
                let x = rng.random_range(-1.0..1.0);
                let y = rng.random_range(-1.0..1.0);
                Point3::new(x, y, 0.0)
            }
            Shape::Sphere => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                Point3::new(r * theta.cos(), r * theta.sin(), z)
            }
            Shape::Saddle => {
                let x: f64 = rng.random_range(-1.0..1.0);
                let y: f64 = rng.random_range(-1.0..1.0);
                Point3::new(x, y, Shape::saddle_height(x, y))
            }
        };
        points.push(p);
    }
    Ok(PointCloud::with_name(points, shape.to_string()))
}

/// Perturb every coordinate by i.i.d. zero-mean Gaussian noise of std
/// `spec.sigma`, deterministically in `spec.seed` (ChaCha8, coordinates drawn
/// in x, y, z order per point).
pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "noise sigma must be finite and >= 0, got {}",
            spec.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let dz: f64 = rng.sample(StandardNormal);
            Point3::new(
                p.x + spec.sigma * dx,
                p.y + spec.sigma * dy,
                p.z + spec.sigma * dz,
            )
        })
        .collect();
    Ok(PointCloud {
        points,
        name: cloud.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn xyz(s: &str) -> Result<PointCloud> {
        parse_xyz(Cursor::new(s.to_string()))
    }

    fn ply(s: &str) -> Result<PointCloud> {
        parse_ply(Cursor::new(s.to_string()))
    }

    #[test]
    fn xyz_single_origin_point() {
        let cloud = xyz("0 0 0").unwrap();
        assert_eq!(cloud.points, vec![Point3::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn xyz_skips_comments_and_blank_lines() {
        let cloud = xyz("# header\n\n1 2 3\n# tail\n4 5 6\n").unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn xyz_reports_line_number_on_bad_token() {
        let err = xyz("1 2 3\n4 oops 6\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ply_two_vertices_in_order() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 0 0\n0 1 0\n";
        let cloud = ply(text).unwrap();
        assert_eq!(
            cloud.points,
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)]
        );
    }

    #[test]
    fn ply_missing_row_is_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 0 0\n0 1 0\n";
        let err = ply(text).unwrap_err();
        match err {
            Error::Parse { msg, .. } => {
                assert!(msg.contains("row 3 of 3"), "message was: {msg}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ply_binary_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        match ply(text).unwrap_err() {
            Error::UnsupportedFormat(_) => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ply_extra_vertex_properties_ignored() {
        let text = "ply\nformat ascii 1.0\ncomment generated\nelement vertex 1\nproperty float x\nproperty float nx\nproperty float y\nproperty float z\nend_header\n1 9 2 3\n";
        let cloud = ply(text).unwrap();
        assert_eq!(cloud.points, vec![Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn ply_empty_cloud_round_trip() {
        let cloud = PointCloud::new(vec![]);
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 0"));
        let back = ply(&text).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn round_trip_single_point_exact() {
        let cloud = PointCloud::new(vec![Point3::new(0.5, -0.25, 3.0)]);
        for format in [CloudFormat::Xyz, CloudFormat::PlyAscii] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.dat");
            write_cloud(&cloud, &path, format).unwrap();
            let back = read_cloud(&path, format).unwrap();
            assert_eq!(back.points, cloud.points);
        }
    }

    // Oracle: generate, write, read, compare.
    #[test]
    fn round_trip_1000_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let points: Vec<Point3<f64>> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1e3..1e3),
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points);
        for format in [CloudFormat::Xyz, CloudFormat::PlyAscii] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.dat");
            write_cloud(&cloud, &path, format).unwrap();
            let back = read_cloud(&path, format).unwrap();
            assert_eq!(back.len(), cloud.len());
            for (a, b) in back.points.iter().zip(&cloud.points) {
                for (va, vb) in a.coords.iter().zip(b.coords.iter()) {
                    let rel = (va - vb).abs() / vb.abs().max(1.0);
                    assert!(rel <= 1e-9, "{va} vs {vb}");
                }
            }
        }
    }

    #[test]
    fn synth_plane_lies_on_z0() {
        let cloud = synth_cloud(Shape::Plane, 4, 1).unwrap();
        assert_eq!(cloud.len(), 4);
        assert!(cloud.points.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn synth_sphere_unit_norm() {
        let cloud = synth_cloud(Shape::Sphere, 100, 2).unwrap();
        for p in &cloud.points {
            assert!((p.coords.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_cloud(Shape::Saddle, 50, 7).unwrap();
        let b = synth_cloud(Shape::Saddle, 50, 7).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn synth_rejects_zero_count() {
        assert!(synth_cloud(Shape::Plane, 0, 0).is_err());
    }

    #[test]
    fn noise_sigma_zero_is_identity() {
        let cloud = synth_cloud(Shape::Sphere, 20, 3).unwrap();
        let noisy = add_noise(
            &cloud,
            &NoiseSpec {
                sigma: 0.0,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(noisy.points, cloud.points);
    }

    #[test]
    fn noise_same_seed_is_identical() {
        let cloud = synth_cloud(Shape::Plane, 30, 4).unwrap();
        let spec = NoiseSpec {
            sigma: 0.5,
            seed: 11,
        };
        let a = add_noise(&cloud, &spec).unwrap();
        let b = add_noise(&cloud, &spec).unwrap();
        assert_eq!(a.points, b.points);
    }

    // Oracle: sample statistics of the injected noise.
    #[test]
    fn noise_empirical_std_within_5_percent() {
        let n = 10_000;
        let sigma = 0.01;
        let cloud = synth_cloud(Shape::Plane, n, 5).unwrap();
        let noisy = add_noise(&cloud, &NoiseSpec { sigma, seed: 6 }).unwrap();
        for axis in 0..3 {
            let deltas: Vec<f64> = noisy
                .points
                .iter()
                .zip(&cloud.points)
                .map(|(a, b)| a.coords[axis] - b.coords[axis])
                .collect();
            let mean = deltas.iter().sum::<f64>() / n as f64;
            let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            assert!(
                (std - sigma).abs() / sigma < 0.05,
                "axis {axis}: std {std} vs sigma {sigma}"
            );
        }
    }

    #[test]
    fn noise_rejects_negative_sigma() {
        let cloud = synth_cloud(Shape::Plane, 1, 0).unwrap();
        assert!(add_noise(
            &cloud,
            &NoiseSpec {
                sigma: -1.0,
                seed: 0
            }
        )
        .is_err());
    }

    proptest! {
        // Round-trip identity for both formats on arbitrary finite clouds.
        #[test]
        fn prop_round_trip_identity(
            pts in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6, -1e6f64..1e6), 0..40),
            use_ply in proptest::bool::ANY,
        ) {
            let cloud = PointCloud::new(
                pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect(),
            );
            let mut buf = Vec::new();
            if use_ply {
                write_ply(&cloud, &mut buf).unwrap();
                let back = parse_ply(Cursor::new(buf)).unwrap();
                prop_assert_eq!(back.points, cloud.points);
            } else {
                write_xyz(&cloud, &mut buf).unwrap();
                let back = parse_xyz(Cursor::new(buf)).unwrap();
                prop_assert_eq!(back.points, cloud.points);
            }
        }
    }
}
