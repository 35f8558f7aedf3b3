"""Show a malicious computation server being caught by the tag check.

The simulation harness runs two rounds; in round 1 the computation
server adds an offset to one coordinate of the published aggregate.
Every user's tag verification fails, an alarm is recorded, and round 2
proceeds cleanly with fresh masks.
"""

from vsecagg.harness import AdversarySpec, RunConfig, run_simulation
from vsecagg.wire import unpack_alarm

cfg = RunConfig(users=4, dim=8, rounds=2, seed=21,
                adversary=AdversarySpec("cs", "tamper_aggregate", round_index=1))
report = run_simulation(cfg)

for rec in report.rounds:
    print(f"round {rec.round_index}: m={len(rec.participants)} "
          f"adversarial={rec.adversarial} detected={rec.detected} "
          f"verified={rec.verified} oracle_deviation={rec.oracle_deviation:.1e}")

r, expected, computed = unpack_alarm(report.alarms[0].payload)
print(f"alarm for round {r}: expected tag {expected} != recomputed tag {computed}")
print(f"run exit_ok = {report.exit_ok}  (a detected adversary is a successful run)")

# The same detection holds for every modeled server action:
for target, action in [("cs", "tamper_model_share"), ("cs", "drop_participant"),
                       ("cs", "lie_about_m"), ("vs", "forge_tag")]:
    cfg = RunConfig(users=4, dim=8, rounds=1, seed=22,
                    adversary=AdversarySpec(target, action, round_index=1))
    rec = run_simulation(cfg).rounds[0]
    print(f"{target}:{action:<20} detected={rec.detected}")
