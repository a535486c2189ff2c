//! Recipes shipped with the tool, one per reproduced figure or table.

pub const RECIPES: [(&str, &str); 14] = [
    ("disparity-heatmap", include_str!("../recipes/disparity-heatmap.toml")),
    ("interference", include_str!("../recipes/interference.toml")),
    ("pollution-copyout", include_str!("../recipes/pollution-copyout.toml")),
    ("pollution-flush", include_str!("../recipes/pollution-flush.toml")),
    ("pollution-transparent", include_str!("../recipes/pollution-transparent.toml")),
    ("repl-density", include_str!("../recipes/repl-density.toml")),
    ("repl-density-fifo", include_str!("../recipes/repl-density-fifo.toml")),
    ("repl-density-lru", include_str!("../recipes/repl-density-lru.toml")),
    ("sift-heatmap", include_str!("../recipes/sift-heatmap.toml")),
    ("synth-flush", include_str!("../recipes/synth-flush.toml")),
    ("vision4-cfs", include_str!("../recipes/vision4-cfs.toml")),
    ("vision4-fixed-priority", include_str!("../recipes/vision4-fixed-priority.toml")),
    ("way-frequency", include_str!("../recipes/way-frequency.toml")),
    ("way-frequency-biased", include_str!("../recipes/way-frequency-biased.toml")),
];

pub fn find(name: &str) -> Option<&'static str> {
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// The recipe's `description` key, or an empty string.
pub fn description(text: &str) -> String {
    toml::from_str::<toml::Table>(text)
        .ok()
        .and_then(|t| t.get("description")?.as_str().map(str::to_string))
        .unwrap_or_default()
}
