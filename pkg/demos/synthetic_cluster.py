"""
Detecting attacks in a simulated cluster
========================================

Train on an hour of benign traffic, score the next hour (which contains a
scan, a reverse shell, an SSH flood and a coin miner) and compare against an
isolation forest. Writes the report and likelihood charts to ./demo_out.
"""

from pathlib import Path

from flowpdfa import pipeline
from flowpdfa.evaluation import format_table
from flowpdfa.flows import write_flows
from flowpdfa.synthetic import generate

out = Path("demo_out")
out.mkdir(exist_ok=True)
flows, boundary = generate(users=30, minutes=60, seed=0)
write_flows(flows.records, out / "flows.csv")

cfg = pipeline.PipelineConfig.from_mapping({
    "data": str(out / "flows.csv"),
    "split_boundary": boundary,
    "encoder": {"scheme": "contextual_frequency"},
    "level": "timestamp",
    "plots": {"svg": True},
    "output_dir": str(out / "contextual-timestamp"),
})
res = pipeline.run_train(cfg)
print(f"PTA {res.pta_states} states -> model {len(res.model)} states")
pipeline.run_score(cfg)
print(format_table(pipeline.run_eval(cfg, with_baseline=True)))
print("likelihood chart:", cfg.output_dir / "likelihood_test.svg")
