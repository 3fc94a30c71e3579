"""Estimate 3D poses from corrupted heat maps with EM and compare against
the argmax initialization and a run without temporal smoothness.

Run: python notebooks/heatmap_em_demo.py
"""

from sparsepose import (
    ModelParams,
    SynthConfig,
    corrupt_heatmaps,
    generate_sequence,
    init_from_heatmaps,
    make_dictionary,
    mpjpe_procrustes,
    render_heatmaps,
    solve_em,
)
from sparsepose.metrics import mean_2d_error
from sparsepose.synth import project_sequence

dictionary = make_dictionary(16, seed=1)
cfg = SynthConfig(frames=50, seed=0, corrupt_fraction=0.2)
poses, _, camera = generate_sequence(cfg, dictionary)
truth_2d = project_sequence(poses, camera)
maps, corrupted = corrupt_heatmaps(render_heatmaps(truth_2d, cfg), cfg, dictionary.skeleton)

init = init_from_heatmaps(maps, dictionary)
print(f"argmax init:    3D {mpjpe_procrustes(init.shapes(), poses.coords):.4f}, "
      f"2D {mean_2d_error(maps.argmax_locations(), truth_2d.coords):.2f}px")

for label, params in [("EM", ModelParams()), ("EM, no smooth", ModelParams(beta=0.0, gamma=0.0))]:
    est, expected, report = solve_em(maps, init, params)
    print(f"{label:<15} 3D {mpjpe_procrustes(est.shapes(), poses.coords):.4f}, "
          f"2D {mean_2d_error(expected.coords, truth_2d.coords):.2f}px, {report.em_iterations} EM iterations")
