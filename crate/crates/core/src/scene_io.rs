//! Scene file import/export: JSON lines, one scene per line.
//!
//! Schema per line:
//! {"scene_id": str, "frame_period_s": float, "frames":
//!   [{"t": int, "agents": [{"id": int, "class": "pedestrian"|"vehicle"|"rider",
//!                            "x": float, "y": float, "z": float}]}]}

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scene::Scene;

/// Writes scenes as JSON lines. Output is deterministic for a given input.
pub fn export_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        let line = serde_json::to_string(scene)
            .map_err(|e| CoreError::Invalid(format!("scene `{}`: {e}", scene.scene_id)))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates scenes; blank lines are allowed and skipped. Any
/// malformed line fails with its 1-based line number.
pub fn import_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut scenes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| CoreError::SceneLine {
            line: line_no,
            message: e.to_string(),
        })?;
        scene.validate().map_err(|e| CoreError::SceneLine {
            line: line_no,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentClass, AgentState, Frame};

    fn sample_scene(id: &str) -> Scene {
        Scene {
            scene_id: id.to_string(),
            frame_period_s: 0.5,
            frames: vec![
                Frame {
                    t: 1,
                    agents: vec![AgentState {
                        id: 1,
                        class: AgentClass::Vehicle,
                        x: 1.25,
                        y: -2.5,
                        z: 0.05,
                    }],
                },
                Frame {
                    t: 2,
                    agents: vec![AgentState {
                        id: 1,
                        class: AgentClass::Vehicle,
                        x: 2.25,
                        y: -2.5,
                        z: 0.05,
                    }],
                },
            ],
        }
    }

    #[test]
    fn export_import_round_trip_preserves_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let scenes = vec![sample_scene("a"), sample_scene("b")];
        export_scenes(&path, &scenes).unwrap();
        let loaded = import_scenes(&path).unwrap();
        assert_eq!(loaded, scenes);
    }

    #[test]
    fn missing_class_field_reports_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let good = serde_json::to_string(&sample_scene("a")).unwrap();
        let bad = r#"{"scene_id":"b","frame_period_s":0.5,"frames":[{"t":1,"agents":[{"id":1,"x":0.0,"y":0.0,"z":0.0}]}]}"#;
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        let err = import_scenes(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("class"), "{msg}");
    }

    #[test]
    fn unknown_class_value_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let bad = r#"{"scene_id":"b","frame_period_s":0.5,"frames":[{"t":1,"agents":[{"id":1,"class":"horse","x":0.0,"y":0.0,"z":0.0}]}]}"#;
        std::fs::write(&path, format!("{bad}\n")).unwrap();
        assert!(import_scenes(&path).is_err());
    }

    #[test]
    fn structural_violations_are_caught_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        // Duplicate agent id within a frame.
        let bad = r#"{"scene_id":"b","frame_period_s":0.5,"frames":[{"t":1,"agents":[{"id":1,"class":"rider","x":0.0,"y":0.0,"z":0.0},{"id":1,"class":"rider","x":1.0,"y":0.0,"z":0.0}]}]}"#;
        std::fs::write(&path, format!("{bad}\n")).unwrap();
        let err = import_scenes(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(import_scenes(&path).unwrap().is_empty());
    }
}
