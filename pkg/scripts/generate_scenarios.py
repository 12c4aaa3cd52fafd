#!/usr/bin/env python3
"""Generate the bundled scenario files for mmlink."""
from pathlib import Path

from mmlink.scenario import load_scenario

OUTPUT_DIR = Path(__file__).parent.parent / "scenarios"

BASELINE = {
    "n_ue": 5,
    "slot_duration": "10e-3",
    "meas_duration": "10e-6",
    "traffic_gbps": 1.0,
    "traffic_split": "1/7, 3/7, 1/7, 1/7, 1/7",
    "ue_distances": "10, 10, 15, 25, 30",
    "ue_angles_deg": "5, 85, 45, 10, 80",
    "blockage_p": "0.0026, 0.0026, 0.1, 0.0026, 0.0026",
    "move_radius": "5, 5, 5, 5, 5",
    "codebook_beams": "24, 32, 64, 128, 256, 512",
}

SCENARIOS = [
    # (name, description, settings, changes {iteration: settings})
    ("baseline", "Five UEs, UE 3 blocked 80% of the time, UE 2 carrying 3/7 of the load",
     BASELINE, {}),
    ("light_load", "Reference topology at half the offered load",
     {**BASELINE, "traffic_gbps": 0.5}, {}),
    ("three_ue", "Three UEs, the far one frequently blocked",
     {
         "n_ue": 3,
         "traffic_split": "1/3, 1/3, 1/3",
         "ue_distances": "10, 15, 25",
         "ue_angles_deg": "5, 45, 10",
         "blockage_p": "0.0026, 0.0026, 0.1",
         "move_radius": "5, 5, 5",
         "iterations": 120,
     }, {}),
    ("transfer", "Setup changes every 100 iterations: small, medium, then large variation",
     {**BASELINE, "iterations": 400},
     {
         101: {"ue_distances": "12, 10, 15, 25, 28"},
         201: {"ue_distances": "20, 12, 10, 25, 15",
               "ue_angles_deg": "20, 70, 45, 30, 60",
               "blockage_p": "0.0026, 0.0026, 0.08, 0.0026, 0.01"},
         301: {"ue_distances": "25, 15, 10, 12, 30",
               "ue_angles_deg": "40, 60, 5, 80, 20",
               "blockage_p": "0.1, 0.0026, 0.0026, 0.05, 0.0026"},
     }),
]


def render(description: str, settings: dict, changes: dict) -> str:
    lines = [f"# {description}"]
    lines += [f"{key} = {value}" for key, value in settings.items()]
    for iteration, delta in sorted(changes.items()):
        lines.append("")
        lines.append(f"# from iteration {iteration}")
        lines += [f"change@{iteration}.{key} = {value}" for key, value in delta.items()]
    return "\n".join(lines) + "\n"


def main():
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)

    for name, description, settings, changes in SCENARIOS:
        print(f"Generating {name}...")
        output_path = OUTPUT_DIR / f"{name}.conf"
        output_path.write_text(render(description, settings, changes))
        cfg = load_scenario(output_path)
        print(f"  Saved: {output_path} ({cfg.n_ue} UEs, {cfg.n_actions} actions, {len(cfg.changes)} changes)")

    print(f"\nGenerated {len(SCENARIOS)} scenarios in {OUTPUT_DIR}")


if __name__ == "__main__":
    main()
