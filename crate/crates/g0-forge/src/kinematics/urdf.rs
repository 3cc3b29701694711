//! URDF parser covering the subset the pipeline needs: `robot`, `link`,
//! `joint` (revolute / prismatic / fixed / continuous), `origin`, `axis`,
//! `limit`, and collision `cylinder` / `sphere` geometry mapped to
//! capsules. Anything else (meshes, transmissions, gazebo extensions) is
//! skipped with a recorded warning.

use std::collections::{HashMap, HashSet};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, UnitVector3, Vector3};
use roxmltree::{Document, Node};

use super::collision::Capsule;
use super::model::{Joint, JointKind, KinematicsError, Link, RobotModel};

/// Limits substituted for `continuous` joints so the limit checker stays
/// uniform across joint kinds.
const CONTINUOUS_LIMIT: f64 = 1e9;

pub fn parse_urdf(text: &str) -> Result<RobotModel, KinematicsError> {
    let doc = Document::parse(text)
        .map_err(|e| KinematicsError::MalformedXml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(KinematicsError::MalformedXml(
            "root element is not <robot>".into(),
        ));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();
    let mut warnings = Vec::new();

    let mut links = Vec::new();
    let mut joints = Vec::new();
    for child in robot.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "link" => links.push(parse_link(&child, &mut warnings)?),
            "joint" => joints.push(parse_joint(&child, &mut warnings)?),
            other => warnings.push(format!("skipped unsupported element <{other}>")),
        }
    }

    let link_names: HashSet<&str> = links.iter().map(|l| l.name.as_str()).collect();
    for joint in &joints {
        for l in [&joint.parent_link, &joint.child_link] {
            if !link_names.contains(l.as_str()) {
                return Err(KinematicsError::DanglingParentLink {
                    joint: joint.name.clone(),
                    link: l.clone(),
                });
            }
        }
    }

    let (base_frame, ordered) = order_joints(&links, joints)?;
    let collision_pairs = collision_pairs(&links, &ordered);

    Ok(RobotModel {
        name,
        joints: ordered,
        links,
        base_frame,
        end_effectors: Vec::new(),
        collision_pairs,
        warnings,
    })
}

/// Topologically sort joints from the base out; the base link is the one
/// that is never a child. Detects cycles and disconnected subtrees.
fn order_joints(
    links: &[Link],
    joints: Vec<Joint>,
) -> Result<(String, Vec<Joint>), KinematicsError> {
    let children: HashSet<&str> = joints.iter().map(|j| j.child_link.as_str()).collect();
    let base = links
        .iter()
        .map(|l| l.name.as_str())
        .find(|n| !children.contains(n))
        .ok_or_else(|| {
            KinematicsError::CyclicKinematicTree(
                links.first().map(|l| l.name.clone()).unwrap_or_default(),
            )
        })?
        .to_string();

    let mut by_parent: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, j) in joints.iter().enumerate() {
        by_parent.entry(j.parent_link.as_str()).or_default().push(i);
    }

    let mut ordered = Vec::with_capacity(joints.len());
    let mut frontier = vec![base.clone()];
    let mut visited = HashSet::new();
    visited.insert(base.clone());
    while let Some(link) = frontier.pop() {
        if let Some(idx) = by_parent.get(link.as_str()) {
            for &i in idx {
                let j = &joints[i];
                if !visited.insert(j.child_link.clone()) {
                    return Err(KinematicsError::CyclicKinematicTree(j.child_link.clone()));
                }
                ordered.push(j.clone());
                frontier.push(j.child_link.clone());
            }
        }
    }
    if ordered.len() != joints.len() {
        // remaining joints hang off links unreachable from the base
        let stray = joints
            .iter()
            .find(|j| !ordered.iter().any(|o| o.name == j.name))
            .expect("count mismatch implies a stray joint");
        return Err(KinematicsError::CyclicKinematicTree(stray.child_link.clone()));
    }
    Ok((base, ordered))
}

/// All link pairs where both links carry collision geometry, minus
/// adjacent (parent/child) pairs.
fn collision_pairs(links: &[Link], joints: &[Joint]) -> Vec<(String, String)> {
    let adjacent: HashSet<(String, String)> = joints
        .iter()
        .flat_map(|j| {
            [
                (j.parent_link.clone(), j.child_link.clone()),
                (j.child_link.clone(), j.parent_link.clone()),
            ]
        })
        .collect();
    let with_geom: Vec<&Link> = links
        .iter()
        .filter(|l| !l.collision_capsules.is_empty())
        .collect();
    let mut out = Vec::new();
    for (i, a) in with_geom.iter().enumerate() {
        for b in &with_geom[i + 1..] {
            if !adjacent.contains(&(a.name.clone(), b.name.clone())) {
                out.push((a.name.clone(), b.name.clone()));
            }
        }
    }
    out
}

fn parse_link(node: &Node, warnings: &mut Vec<String>) -> Result<Link, KinematicsError> {
    let name = node
        .attribute("name")
        .ok_or_else(|| KinematicsError::MalformedXml("<link> without name".into()))?
        .to_string();
    let mut capsules = Vec::new();
    for coll in node
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "collision")
    {
        let origin = coll
            .children()
            .find(|c| c.is_element() && c.tag_name().name() == "origin")
            .map(|o| parse_origin(&o))
            .transpose()?
            .unwrap_or_else(Isometry3::identity);
        let Some(geom) = coll
            .children()
            .find(|c| c.is_element() && c.tag_name().name() == "geometry")
        else {
            continue;
        };
        for shape in geom.children().filter(Node::is_element) {
            match shape.tag_name().name() {
                "cylinder" => {
                    let radius = req_f64(&shape, "radius")?;
                    let length = req_f64(&shape, "length")?;
                    let half = Vector3::new(0.0, 0.0, length / 2.0);
                    capsules.push(Capsule::new(
                        origin * Point3::from(-half),
                        origin * Point3::from(half),
                        radius,
                    ));
                }
                "sphere" => {
                    let radius = req_f64(&shape, "radius")?;
                    capsules.push(Capsule::sphere(origin * Point3::origin(), radius));
                }
                other => {
                    warnings.push(format!(
                        "link '{name}': skipped unsupported collision shape <{other}>"
                    ));
                }
            }
        }
    }
    for child in node.children().filter(Node::is_element) {
        let tag = child.tag_name().name();
        if !matches!(tag, "collision" | "visual" | "inertial") {
            warnings.push(format!("link '{name}': skipped unsupported element <{tag}>"));
        }
    }
    Ok(Link { name, collision_capsules: capsules })
}

fn parse_joint(node: &Node, warnings: &mut Vec<String>) -> Result<Joint, KinematicsError> {
    let name = node
        .attribute("name")
        .ok_or_else(|| KinematicsError::MalformedXml("<joint> without name".into()))?
        .to_string();
    let type_attr = node.attribute("type").unwrap_or("fixed");
    let (kind, continuous) = match type_attr {
        "revolute" => (JointKind::Revolute, false),
        "continuous" => (JointKind::Revolute, true),
        "prismatic" => (JointKind::Prismatic, false),
        "fixed" => (JointKind::Fixed, false),
        other => {
            warnings.push(format!(
                "joint '{name}': unsupported type '{other}' treated as fixed"
            ));
            (JointKind::Fixed, false)
        }
    };

    let find = |tag: &str| {
        node.children()
            .find(|c| c.is_element() && c.tag_name().name() == tag)
    };
    let parent_link = find("parent")
        .and_then(|p| p.attribute("link").map(str::to_string))
        .ok_or_else(|| KinematicsError::MalformedXml(format!("joint '{name}' has no parent")))?;
    let child_link = find("child")
        .and_then(|c| c.attribute("link").map(str::to_string))
        .ok_or_else(|| KinematicsError::MalformedXml(format!("joint '{name}' has no child")))?;
    let origin = find("origin")
        .map(|o| parse_origin(&o))
        .transpose()?
        .unwrap_or_else(Isometry3::identity);

    let axis = if kind == JointKind::Fixed {
        UnitVector3::new_normalize(Vector3::z())
    } else {
        let node = find("axis").ok_or_else(|| KinematicsError::MissingAxis(name.clone()))?;
        let v = parse_vec3(node.attribute("xyz").unwrap_or("1 0 0"))?;
        if v.norm() < 1e-12 {
            return Err(KinematicsError::MissingAxis(name.clone()));
        }
        UnitVector3::new_normalize(v)
    };

    let (mut lower, mut upper, mut velocity) = (0.0, 0.0, f64::INFINITY);
    if continuous {
        lower = -CONTINUOUS_LIMIT;
        upper = CONTINUOUS_LIMIT;
    }
    if let Some(limit) = find("limit") {
        if !continuous {
            lower = opt_f64(&limit, "lower")?.unwrap_or(0.0);
            upper = opt_f64(&limit, "upper")?.unwrap_or(0.0);
        }
        velocity = opt_f64(&limit, "velocity")?.unwrap_or(f64::INFINITY);
    }

    Ok(Joint {
        name,
        kind,
        axis,
        origin,
        parent_link,
        child_link,
        limit_lower: lower,
        limit_upper: upper,
        velocity_limit: velocity,
    })
}

fn parse_origin(node: &Node) -> Result<Isometry3<f64>, KinematicsError> {
    let xyz = parse_vec3(node.attribute("xyz").unwrap_or("0 0 0"))?;
    let rpy = parse_vec3(node.attribute("rpy").unwrap_or("0 0 0"))?;
    let rot = UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z);
    Ok(Isometry3::from_parts(Translation3::from(xyz), rot))
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, KinematicsError> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| KinematicsError::MalformedXml(format!("bad vector '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(KinematicsError::MalformedXml(format!(
            "expected 3 components in '{s}'"
        )));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn req_f64(node: &Node, attr: &str) -> Result<f64, KinematicsError> {
    opt_f64(node, attr)?.ok_or_else(|| {
        KinematicsError::MalformedXml(format!(
            "<{}> missing attribute '{attr}'",
            node.tag_name().name()
        ))
    })
}

fn opt_f64(node: &Node, attr: &str) -> Result<Option<f64>, KinematicsError> {
    node.attribute(attr)
        .map(|v| {
            v.parse::<f64>().map_err(|e| {
                KinematicsError::MalformedXml(format!("bad number '{v}' for '{attr}': {e}"))
            })
        })
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"
        <robot name="one">
          <link name="base"/>
          <link name="arm"/>
          <joint name="j1" type="revolute">
            <parent link="base"/>
            <child link="arm"/>
            <axis xyz="0 0 1"/>
            <limit lower="-1.5708" upper="1.5708" velocity="2.0"/>
          </joint>
        </robot>"#;

    #[test]
    fn single_revolute_joint() {
        let model = parse_urdf(SINGLE).unwrap();
        assert_eq!(model.dof(), 1);
        let j = model.non_fixed_joints().next().unwrap();
        assert_eq!(j.limit_lower, -1.5708);
        assert_eq!(j.limit_upper, 1.5708);
        assert_eq!(model.base_frame, "base");
    }

    #[test]
    fn dangling_parent_is_rejected() {
        let text = SINGLE.replace(r#"parent link="base""#, r#"parent link="ghost""#);
        match parse_urdf(&text) {
            Err(KinematicsError::DanglingParentLink { link, .. }) => assert_eq!(link, "ghost"),
            other => panic!("expected DanglingParentLink, got {other:?}"),
        }
    }

    #[test]
    fn missing_axis_is_rejected() {
        let text = SINGLE.replace(r#"<axis xyz="0 0 1"/>"#, "");
        assert!(matches!(
            parse_urdf(&text),
            Err(KinematicsError::MissingAxis(_))
        ));
    }

    #[test]
    fn malformed_xml_is_rejected() {
        assert!(matches!(
            parse_urdf("<robot><link"),
            Err(KinematicsError::MalformedXml(_))
        ));
    }

    #[test]
    fn cycle_is_rejected() {
        let text = r#"
            <robot name="loop">
              <link name="a"/><link name="b"/>
              <joint name="ab" type="fixed"><parent link="a"/><child link="b"/></joint>
              <joint name="ba" type="fixed"><parent link="b"/><child link="a"/></joint>
            </robot>"#;
        assert!(matches!(
            parse_urdf(text),
            Err(KinematicsError::CyclicKinematicTree(_))
        ));
    }

    #[test]
    fn continuous_maps_to_wide_limits() {
        let text = SINGLE
            .replace("revolute", "continuous")
            .replace(r#"lower="-1.5708" upper="1.5708""#, "");
        let model = parse_urdf(&text).unwrap();
        let j = model.non_fixed_joints().next().unwrap();
        assert_eq!(j.limit_lower, -1e9);
        assert_eq!(j.limit_upper, 1e9);
    }

    #[test]
    fn collision_shapes_become_capsules() {
        let text = r#"
            <robot name="geom">
              <link name="base">
                <collision>
                  <origin xyz="0 0 0.1"/>
                  <geometry><cylinder radius="0.05" length="0.2"/></geometry>
                </collision>
              </link>
              <link name="tip">
                <collision>
                  <geometry><sphere radius="0.03"/></geometry>
                </collision>
                <collision>
                  <geometry><mesh filename="tip.stl"/></geometry>
                </collision>
              </link>
              <link name="mid"/>
              <joint name="bm" type="fixed"><parent link="base"/><child link="mid"/></joint>
              <joint name="mt" type="fixed"><parent link="mid"/><child link="tip"/></joint>
            </robot>"#;
        let model = parse_urdf(text).unwrap();
        let base = model.link("base").unwrap();
        assert_eq!(base.collision_capsules.len(), 1);
        assert!((base.collision_capsules[0].a.z - 0.0).abs() < 1e-12);
        assert!((base.collision_capsules[0].b.z - 0.2).abs() < 1e-12);
        let tip = model.link("tip").unwrap();
        assert_eq!(tip.collision_capsules.len(), 1);
        assert_eq!(tip.collision_capsules[0].a, tip.collision_capsules[0].b);
        // base and tip are non-adjacent and both have geometry
        assert_eq!(model.collision_pairs.len(), 1);
        assert!(model.warnings.iter().any(|w| w.contains("mesh")));
    }
}
