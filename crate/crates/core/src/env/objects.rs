use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Drawer,
    Door,
}

impl Category {
    pub fn task(self) -> &'static str {
        match self {
            Category::Drawer => "pull_drawer",
            Category::Door => "open_door",
        }
    }

    pub fn from_task(task: &str) -> Result<Self> {
        match task {
            "pull_drawer" => Ok(Category::Drawer),
            "open_door" => Ok(Category::Door),
            other => Err(Error::UnknownCategory(other.to_string())),
        }
    }

    /// Joint value that counts as success: 0.15 m for drawers, 30° for doors.
    pub fn success_threshold(self) -> f64 {
        match self {
            Category::Drawer => 0.15,
            Category::Door => 30f64.to_radians(),
        }
    }

    fn tag(self) -> u64 {
        match self {
            Category::Drawer => 1,
            Category::Door => 2,
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drawer" => Ok(Category::Drawer),
            "door" => Ok(Category::Door),
            other => Err(Error::UnknownCategory(other.to_string())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Drawer => "drawer",
            Category::Door => "door",
        })
    }
}

/// Nominal handle distance from the robot base.
pub const NOMINAL_REACH: f64 = 0.52;

/// A cabinet body with one moving front panel carrying a bar handle.
///
/// Local frame: origin at the centre of the closed panel's front face, +x the
/// outward panel normal, +z up. `yaw` is the world direction of +x.
/// Drawers slide along +x; doors swing about a vertical hinge on the panel's
/// −y edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedObject {
    pub category: Category,
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    pub panel_thickness: f64,
    pub handle_length: f64,
    pub handle_radius: f64,
    /// Distance from the panel front face to the handle axis.
    pub handle_standoff: f64,
    /// Handle centre on the panel as (lateral, vertical).
    pub handle_offset: [f64; 2],
    pub origin: Vec3,
    pub yaw: f64,
    pub joint_value: f64,
    pub joint_limits: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct Prototype {
    width: f64,
    height: f64,
    depth: f64,
    thickness: f64,
    handle_length: f64,
    handle_radius: f64,
    standoff: f64,
    limits: (f64, f64),
}

fn prototype(category: Category) -> Prototype {
    match category {
        Category::Drawer => Prototype {
            width: 0.30,
            height: 0.14,
            depth: 0.25,
            thickness: 0.02,
            handle_length: 0.10,
            handle_radius: 0.008,
            standoff: 0.03,
            limits: (0.0, 0.25),
        },
        Category::Door => Prototype {
            width: 0.30,
            height: 0.36,
            depth: 0.25,
            thickness: 0.02,
            handle_length: 0.10,
            handle_radius: 0.008,
            standoff: 0.03,
            limits: (0.0, 1.4),
        },
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Builds a deterministic instance. `variation` in [0, 1] scales every
/// random deviation from the category prototype.
pub fn generate_object(category: Category, seed: u64, variation: f64) -> Result<ArticulatedObject> {
    if !(0.0..=1.0).contains(&variation) {
        return Err(Error::Contract(format!("variation {variation} outside [0, 1]")));
    }
    let p = prototype(category);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, category.tag()));
    let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let v = variation;
    let width = p.width * (1.0 + 0.3 * v * u[0]);
    let height = p.height * (1.0 + 0.4 * v * u[1]);
    let depth = p.depth * (1.0 + 0.3 * v * u[2]);
    let handle_length = p.handle_length * (1.0 + 0.2 * v * u[3]);
    let lateral = match category {
        Category::Drawer => {
            let max = (width / 2.0 - handle_length / 2.0 - 0.01).max(0.0);
            (0.2 * width * v * u[4]).clamp(-max, max)
        }
        Category::Door => width / 2.0 - 0.04,
    };
    let mut obj = ArticulatedObject {
        category,
        seed,
        width,
        height,
        depth,
        panel_thickness: p.thickness,
        handle_length,
        handle_radius: p.handle_radius,
        handle_standoff: p.standoff,
        handle_offset: [lateral, 0.0],
        origin: Vec3::zeros(),
        yaw: PI,
        joint_value: p.limits.0,
        joint_limits: p.limits,
    };
    obj.place(NOMINAL_REACH + 0.05 * v * u[5], 0.3 * v * u[6], 0.3 * v * u[7]);
    Ok(obj)
}

impl ArticulatedObject {
    pub fn id(&self) -> String {
        format!("{}-{:04}", self.category, self.seed)
    }

    /// Puts the closed handle at distance `reach` and bearing `bearing` from
    /// the base, with the panel facing the base up to `facing_offset`.
    pub fn place(&mut self, reach: f64, bearing: f64, facing_offset: f64) {
        self.yaw = bearing + PI + facing_offset;
        let handle = Vec3::new(reach * bearing.cos(), reach * bearing.sin(), 0.0);
        self.origin = handle - rot_z(self.yaw) * self.handle_local(self.joint_limits.0);
    }

    pub fn shift(&mut self, offset: &Vec3) {
        self.origin += offset;
    }

    fn to_world(&self, p: &Vec3) -> Vec3 {
        self.origin + rot_z(self.yaw) * p
    }

    fn dir_to_world(&self, d: &Vec3) -> Vec3 {
        rot_z(self.yaw) * d
    }

    /// Pose of the moving panel frame inside the object frame at `value`.
    fn panel_pose(&self, value: f64) -> (Matrix3<f64>, Vec3) {
        match self.category {
            Category::Drawer => (Matrix3::identity(), Vec3::new(value, 0.0, 0.0)),
            Category::Door => {
                let hinge = Vec3::new(0.0, -self.width / 2.0, 0.0);
                let r = rot_z(-value);
                (r, hinge - r * hinge)
            }
        }
    }

    fn handle_centre_panel(&self) -> Vec3 {
        Vec3::new(self.handle_standoff, self.handle_offset[0], self.handle_offset[1])
    }

    fn handle_axis_panel(&self) -> Vec3 {
        match self.category {
            Category::Drawer => Vec3::y(),
            Category::Door => Vec3::z(),
        }
    }

    fn handle_local(&self, value: f64) -> Vec3 {
        let (r, t) = self.panel_pose(value);
        r * self.handle_centre_panel() + t
    }

    /// World position of the handle's centre at joint value `value`.
    pub fn handle_position_at(&self, value: f64) -> Vec3 {
        self.to_world(&self.handle_local(value))
    }

    pub fn handle_position(&self) -> Vec3 {
        self.handle_position_at(self.joint_value)
    }

    /// Derivative of the handle centre with respect to the joint value.
    pub fn handle_velocity(&self, value: f64) -> Vec3 {
        match self.category {
            Category::Drawer => self.dir_to_world(&Vec3::x()),
            Category::Door => {
                let rel = self.handle_centre_panel() + Vec3::new(0.0, self.width / 2.0, 0.0);
                let (s, c) = value.sin_cos();
                let d = Vec3::new(-rel.x * s + rel.y * c, -rel.x * c - rel.y * s, 0.0);
                self.dir_to_world(&d)
            }
        }
    }

    pub fn handle_axis(&self) -> Vec3 {
        let (r, _) = self.panel_pose(self.joint_value);
        self.dir_to_world(&(r * self.handle_axis_panel()))
    }

    /// Distance from `p` to the handle's axis segment.
    pub fn distance_to_handle(&self, p: &Vec3) -> f64 {
        let c = self.handle_position();
        let a = self.handle_axis();
        let s = (p - c).dot(&a).clamp(-self.handle_length / 2.0, self.handle_length / 2.0);
        (p - (c + a * s)).norm()
    }

    /// World direction of the panel's outward normal at the current value.
    pub fn panel_normal(&self) -> Vec3 {
        let (r, _) = self.panel_pose(self.joint_value);
        self.dir_to_world(&(r * Vec3::x()))
    }

    /// Moves the joint so the handle follows `displacement` as closely as the
    /// joint allows; returns whether the limits clipped the result.
    pub fn follow(&mut self, displacement: &Vec3) -> bool {
        let goal = self.handle_position() + displacement;
        let mut v = self.joint_value;
        for _ in 0..8 {
            let h = self.handle_position_at(v);
            let dh = self.handle_velocity(v);
            let step = (goal - h).dot(&dh) / dh.norm_squared();
            v += step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        let clamped = v.clamp(self.joint_limits.0, self.joint_limits.1);
        self.joint_value = clamped;
        clamped != v
    }

    pub fn set_joint_value(&mut self, value: f64) -> bool {
        let clamped = value.clamp(self.joint_limits.0, self.joint_limits.1);
        self.joint_value = clamped;
        clamped != value
    }

    fn surfaces(&self) -> Vec<Surface> {
        let (w, h, d, t) = (self.width, self.height, self.depth, self.panel_thickness);
        let mut out = Vec::new();
        // Body shell behind the panel, open at the front.
        let bx = -t - d / 2.0;
        let body_canon = move |p: &Vec3| Vec3::new((p.x - bx) / d, p.y / w, p.z / h);
        let body = [
            (Vec3::new(-t - d, 0.0, 0.0), Vec3::y() * (w / 2.0), Vec3::z() * (h / 2.0), -Vec3::x()),
            (Vec3::new(bx, 0.0, h / 2.0), Vec3::x() * (d / 2.0), Vec3::y() * (w / 2.0), Vec3::z()),
            (Vec3::new(bx, 0.0, -h / 2.0), Vec3::x() * (d / 2.0), Vec3::y() * (w / 2.0), -Vec3::z()),
            (Vec3::new(bx, w / 2.0, 0.0), Vec3::x() * (d / 2.0), Vec3::z() * (h / 2.0), Vec3::y()),
            (Vec3::new(bx, -w / 2.0, 0.0), Vec3::x() * (d / 2.0), Vec3::z() * (h / 2.0), -Vec3::y()),
        ];
        for (c, a, b, n) in body {
            out.push(Surface::rect(Part::Body, c, a, b, n, Box::new(body_canon)));
        }
        let panel_canon = move |p: &Vec3| Vec3::new((p.x + t / 2.0) / t + 2.0, p.y / w, p.z / h);
        let panel = [
            (Vec3::zeros(), Vec3::y() * (w / 2.0), Vec3::z() * (h / 2.0), Vec3::x()),
            (Vec3::new(-t, 0.0, 0.0), Vec3::y() * (w / 2.0), Vec3::z() * (h / 2.0), -Vec3::x()),
            (Vec3::new(-t / 2.0, 0.0, h / 2.0), Vec3::x() * (t / 2.0), Vec3::y() * (w / 2.0), Vec3::z()),
            (Vec3::new(-t / 2.0, 0.0, -h / 2.0), Vec3::x() * (t / 2.0), Vec3::y() * (w / 2.0), -Vec3::z()),
            (Vec3::new(-t / 2.0, w / 2.0, 0.0), Vec3::x() * (t / 2.0), Vec3::z() * (h / 2.0), Vec3::y()),
            (Vec3::new(-t / 2.0, -w / 2.0, 0.0), Vec3::x() * (t / 2.0), Vec3::z() * (h / 2.0), -Vec3::y()),
        ];
        for (c, a, b, n) in panel {
            out.push(Surface::rect(Part::Panel, c, a, b, n, Box::new(panel_canon)));
        }
        out.push(Surface::Cylinder {
            centre: self.handle_centre_panel(),
            axis: self.handle_axis_panel(),
            e1: Vec3::x(),
            e2: self.handle_axis_panel().cross(&Vec3::x()),
            radius: self.handle_radius,
            half_length: self.handle_length / 2.0,
        });
        out
    }

    /// Area-uniform samples of the camera-facing surfaces in world
    /// coordinates, with their canonical chart coordinates.
    ///
    /// Canonical chart: each part's box is normalised to [−0.5, 0.5]³ and
    /// offset by 0 (body), 2 (panel) or 4 (handle) along the first axis; the
    /// handle uses (axial fraction, 0.1 cos θ, 0.1 sin θ) around its axis.
    pub fn sample_surface(&self, count: usize, camera: &Vec3, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        let surfaces = self.surfaces();
        let dist = WeightedIndex::new(surfaces.iter().map(|s| s.area()))
            .map_err(|e| Error::Contract(format!("degenerate object surfaces: {e}")))?;
        let (pr, pt) = self.panel_pose(self.joint_value);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut canonical = Vec::with_capacity(count);
        let mut tries = 0usize;
        while points.len() < count {
            tries += 1;
            if tries > count * 50 {
                return Err(Error::Size(format!("only {} visible surface samples", points.len())));
            }
            let s = &surfaces[dist.sample(&mut rng)];
            let (local, normal, canon) = s.sample(&mut rng);
            let (local, normal) = if s.part() == Part::Body {
                (local, normal)
            } else {
                (pr * local + pt, pr * normal)
            };
            let world = self.to_world(&local);
            if (camera - world).dot(&self.dir_to_world(&normal)) <= 0.0 {
                continue;
            }
            points.push(world);
            canonical.push(canon);
        }
        Ok((points, canonical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Body,
    Panel,
    Handle,
}

type CanonFn = Box<dyn Fn(&Vec3) -> Vec3>;

enum Surface {
    Rect {
        part: Part,
        centre: Vec3,
        a: Vec3,
        b: Vec3,
        normal: Vec3,
        canon: CanonFn,
    },
    Cylinder {
        centre: Vec3,
        axis: Vec3,
        e1: Vec3,
        e2: Vec3,
        radius: f64,
        half_length: f64,
    },
}

impl Surface {
    fn rect(part: Part, centre: Vec3, a: Vec3, b: Vec3, normal: Vec3, canon: CanonFn) -> Self {
        Surface::Rect {
            part,
            centre,
            a,
            b,
            normal,
            canon,
        }
    }

    fn part(&self) -> Part {
        match self {
            Surface::Rect { part, .. } => *part,
            Surface::Cylinder { .. } => Part::Handle,
        }
    }

    fn area(&self) -> f64 {
        match self {
            Surface::Rect { a, b, .. } => 4.0 * a.norm() * b.norm(),
            Surface::Cylinder {
                radius, half_length, ..
            } => 2.0 * PI * radius * 2.0 * half_length,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> (Vec3, Vec3, Vec3) {
        match self {
            Surface::Rect {
                centre,
                a,
                b,
                normal,
                canon,
                ..
            } => {
                let p = centre + a * rng.random_range(-1.0..=1.0) + b * rng.random_range(-1.0..=1.0);
                (p, *normal, canon(&p))
            }
            Surface::Cylinder {
                centre,
                axis,
                e1,
                e2,
                radius,
                half_length,
            } => {
                let s = rng.random_range(-*half_length..=*half_length);
                let th = rng.random_range(-PI..PI);
                let n = e1 * th.cos() + e2 * th.sin();
                let canon = Vec3::new(4.0 + s / (2.0 * half_length), 0.1 * th.cos(), 0.1 * th.sin());
                (centre + axis * s + n * *radius, n, canon)
            }
        }
    }
}
