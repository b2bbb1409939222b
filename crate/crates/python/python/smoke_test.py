"""Smoke test for the bdpp extension module."""

import json

import bdpp


def main():
    problem = bdpp.Problem.resource_allocation(n_agents=10, seed=1)
    schedule = bdpp.Schedule.ring_partition(10, 4)
    schedule.validate()
    problem.validate()
    assert schedule.check()["b_connected"]

    ref = bdpp.solve_reference(problem)
    f_star = ref["f_star"]
    assert ref["certified"], ref
    f, g = problem.evaluate(ref["x_star"])
    assert abs(f - f_star) < 1e-9 and g[0] <= 1e-9

    rep = bdpp.bounds(problem, schedule, 0.27)
    assert rep["sigma"] == rep["delta"]

    res = bdpp.run(problem, schedule, 2000, c=0.27, seed=1)
    assert len(res) == len(res.t) > 0
    assert all(s is None or s >= -1e-9 for s in res.lemma1_slack_min)
    summary = res.summary()
    assert summary["horizon"] == 2000
    assert abs(res.objective_error[-1]) < 0.05, res.objective_error[-1]

    for alg in ("dpp", "dual_subgrad"):
        other = bdpp.run(problem, schedule, 500, algorithm=alg, f_star=f_star)
        assert other.summary()["algorithm"]

    engine = bdpp.Engine(problem, schedule, 0.27, seed=1, f_star=f_star)
    for _ in range(5):
        rec = engine.step()
    assert rec["t"] == 5
    assert all(q >= 0 for row in engine.queues for q in row)

    same = bdpp.Problem.from_json(problem.to_json())
    assert same.n_agents == 10
    assert bdpp.Schedule.from_json(schedule.to_json()).period == schedule.period

    try:
        bdpp.Schedule.ring_partition(10, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("window 0 accepted")
    try:
        bdpp.run(problem, schedule, 10, algorithm="newton")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown algorithm accepted")

    print(json.dumps({"f_star": f_star, "final_error": res.objective_error[-1]}))
    print("smoke test ok")


if __name__ == "__main__":
    main()
