//! Static SVG rendering of an episode log.
//!
//! Robots are green with a dashed sensor circle and a dashed blue line to a
//! red goal star. Humans are orange while some robot perceives them and
//! black otherwise. Every entity leaves a trail that fades towards the
//! past, and the snapshot frame shows five constant-velocity predicted
//! poses per entity.

use std::fmt::Write as _;

use multisoc::geom::Vec2;
use multisoc::percept::{predict_trajectory, HORIZON};
use multisoc::sim::{EntityKind, EpisodeLog};

/// World → canvas mapping: `x' = margin + (x − min_x)·scale`,
/// `y' = margin + (max_y − y)·scale` (y points up in the world, down on
/// the canvas).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub min_x: f64,
    pub max_y: f64,
    pub scale: f64,
    pub margin: f64,
    pub width: f64,
    pub height: f64,
}

impl Transform {
    /// Fits the box `[min, max]` into a canvas whose longer side is `size`
    /// pixels, plus margin.
    pub fn fit(min: Vec2, max: Vec2, size: f64, margin: f64) -> Self {
        let w = (max.x - min.x).max(1e-9);
        let h = (max.y - min.y).max(1e-9);
        let scale = size / w.max(h);
        Self {
            min_x: min.x,
            max_y: max.y,
            scale,
            margin,
            width: w * scale + 2.0 * margin,
            height: h * scale + 2.0 * margin,
        }
    }

    pub fn apply(&self, p: Vec2) -> (f64, f64) {
        (
            self.margin + (p.x - self.min_x) * self.scale,
            self.margin + (self.max_y - p.y) * self.scale,
        )
    }

    pub fn length(&self, d: f64) -> f64 {
        d * self.scale
    }
}

#[derive(Clone, Debug)]
pub struct RenderOptions {
    /// Radius of the dashed circle drawn around robots.
    pub sensor_range: f64,
    /// Record index of the snapshot; the last record when `None`.
    pub frame: Option<usize>,
    /// Longer canvas side in pixels, margin excluded.
    pub size: f64,
    pub margin: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            sensor_range: 5.0,
            frame: None,
            size: 600.0,
            margin: 20.0,
        }
    }
}

/// Bounding box of every position, goal and robot sensor circle.
fn bounds(log: &EpisodeLog, opts: &RenderOptions) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Vec2, r: f64| {
        lo = Vec2::new(lo.x.min(p.x - r), lo.y.min(p.y - r));
        hi = Vec2::new(hi.x.max(p.x + r), hi.y.max(p.y + r));
    };
    for rec in &log.records {
        for e in &rec.entities {
            grow(e.position, e.radius);
            if e.kind == EntityKind::Robot {
                grow(e.goal, 0.3);
            }
        }
    }
    if let Some(rec) = opts.frame.and_then(|f| log.records.get(f)).or(log.records.last()) {
        for e in rec.entities.iter().filter(|e| e.kind == EntityKind::Robot) {
            grow(e.position, opts.sensor_range);
        }
    }
    if !lo.x.is_finite() {
        return (Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0));
    }
    (lo, hi)
}

/// Transform used by [`render`] for this log.
pub fn transform_for(log: &EpisodeLog, opts: &RenderOptions) -> Transform {
    let (lo, hi) = bounds(log, opts);
    Transform::fit(lo, hi, opts.size, opts.margin)
}

fn star(c: (f64, f64), r: f64) -> String {
    (0..10)
        .map(|k| {
            let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
            let rr = if k % 2 == 0 { r } else { r * 0.45 };
            format!("{:.3},{:.3}", c.0 + rr * a.cos(), c.1 + rr * a.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the whole episode. An empty log yields a blank canvas.
pub fn render(log: &EpisodeLog, opts: &RenderOptions) -> String {
    let tf = transform_for(log, opts);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.3} {h:.3}" data-transform="{mx} {my} {sc} {mg}">"#,
        w = tf.width,
        h = tf.height,
        mx = tf.min_x,
        my = tf.max_y,
        sc = tf.scale,
        mg = tf.margin,
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let frame = match opts.frame {
        Some(f) => f.min(log.records.len().saturating_sub(1)),
        None => log.records.len().saturating_sub(1),
    };
    let Some(snap) = log.records.get(frame) else {
        s.push_str("</svg>\n");
        return s;
    };
    let steps = frame + 1;
    for (i, e) in snap.entities.iter().enumerate() {
        let robot = e.kind == EntityKind::Robot;
        let color = if robot {
            "green"
        } else if snap.visible[i] {
            "orange"
        } else {
            "black"
        };
        let _ = writeln!(
            s,
            r#"<g class="entity" data-id="{}" data-kind="{}" data-status="{}">"#,
            e.id,
            e.kind.as_str(),
            e.status.as_str()
        );
        let path: Vec<Vec2> = log.records[..steps]
            .iter()
            .map(|r| r.entities[i].position)
            .collect();
        let pts: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = tf.apply(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trail" points="{}" fill="none" stroke="{color}" stroke-opacity="0.25" stroke-width="1"/>"#,
            pts.join(" ")
        );
        // Past poses, more transparent the older they are.
        for (k, &p) in path.iter().enumerate().take(steps.saturating_sub(1)) {
            let (x, y) = tf.apply(p);
            let opacity = 0.05 + 0.45 * (k + 1) as f64 / steps as f64;
            let _ = writeln!(
                s,
                r#"<circle class="past" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="{color}" fill-opacity="{opacity:.3}" stroke="none"/>"#,
                tf.length(e.radius)
            );
        }
        let mut probe = e.clone();
        if frame > 0 {
            probe.prev_position = log.records[frame - 1].entities[i].position;
        }
        for (k, p) in predict_trajectory(&probe, log.dt, HORIZON)
            .into_iter()
            .enumerate()
        {
            let (x, y) = tf.apply(p);
            let _ = writeln!(
                s,
                r#"<circle class="predicted" data-k="{}" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="none" stroke="{color}" stroke-opacity="{:.3}" stroke-dasharray="2,2"/>"#,
                k + 1,
                tf.length(e.radius),
                0.6 - 0.1 * k as f64
            );
        }
        let (x, y) = tf.apply(e.position);
        let _ = writeln!(
            s,
            r#"<circle class="body" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="{color}" stroke="black" stroke-width="0.5"/>"#,
            tf.length(e.radius)
        );
        if robot {
            let (gx, gy) = tf.apply(e.goal);
            let _ = writeln!(
                s,
                r#"<circle class="fov" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="none" stroke="green" stroke-dasharray="6,4"/>"#,
                tf.length(opts.sensor_range)
            );
            let _ = writeln!(
                s,
                r#"<line class="goal-line" x1="{x:.3}" y1="{y:.3}" x2="{gx:.3}" y2="{gy:.3}" stroke="blue" stroke-dasharray="4,3"/>"#
            );
            let _ = writeln!(
                s,
                r#"<polygon class="goal" points="{}" fill="red"/>"#,
                star((gx, gy), tf.length(0.25))
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
