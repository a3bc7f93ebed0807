import json
from types import SimpleNamespace

import pytest

import main
from core.command_registry import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, command, dispatch
from core.config import (
    PolicyConfig,
    Variant,
    build_run_config,
    config_dict,
    load_run_config,
    write_run_config,
)
from core.errors import UsageError
from core.world import TaskId


@command(name="_echo_cfg", help="test command")
def _echo_cfg(cfg, args):
    return {"value": cfg}


@command(name="_bad_flag", help="test command")
def _bad_flag(cfg, args):
    raise UsageError("bad flag")


@command(name="_crash", help="test command")
def _crash(cfg, args):
    raise RuntimeError("boom")


def test_defaults_and_profile():
    cfg = load_run_config(env={})
    assert cfg.task == TaskId.FRAGILE_PICK
    assert cfg.policy == PolicyConfig()
    assert cfg.demo.n_demos == 30

    toy = build_run_config({"RUN_PROFILE": "toy"})
    assert toy.policy.train_iters == 2000 and toy.demo.n_demos == 5


def test_precedence_file_env_flags(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("RUN_SEED=3\nPOLICY_LR=0.01\nEVAL_N_ROLLOUTS=7\n")
    cfg = load_run_config(path, env={"RUN_SEED": "5", "HOME": "/root"})
    assert cfg.seed == 5 and cfg.policy.lr == 0.01 and cfg.eval.n_rollouts == 7
    cfg = load_run_config(path, {"seed": 9, "n_rollouts": 2, "variant": "vision_only"}, env={"RUN_SEED": "5"})
    assert cfg.seed == 9 and cfg.eval.n_rollouts == 2
    assert cfg.policy.variant == Variant.VISION_ONLY and cfg.policy.seed == 9


@pytest.mark.parametrize(
    "values, overrides",
    [
        ({"RUN_TASK": "juggle"}, None),
        ({}, {"task": "juggle"}),
        ({}, {"variant": "smell_aware"}),
        ({"RUN_PROFILE": "huge"}, None),
        ({"TASK_COLOUR": "red"}, None),
        ({"TASK_OBJECT_WIDTH": "0.5"}, None),
        ({"POLICY_PRED_HORIZON": "30"}, None),
        ({"CONTROLLER_SWITCH_THRESHOLD": "0.5"}, None),
        ({"RUN_SEED": "seven"}, None),
    ],
)
def test_invalid_configuration(values, overrides):
    with pytest.raises(UsageError):
        build_run_config(values, overrides)


def test_missing_config_file(tmp_path):
    with pytest.raises(UsageError):
        load_run_config(tmp_path / "nope.env", env={})


def test_task_overrides_apply():
    cfg = build_run_config({"RUN_TASK": "heavy_transport", "TASK_OBJECT_MASS": "0.2"})
    assert cfg.task_spec.object_mass == pytest.approx(0.2)


def test_written_config_reloads_to_the_same_run(tmp_path):
    cfg = build_run_config(
        {"RUN_PROFILE": "toy", "RUN_TASK": "tighten", "TASK_FRICTION_MU": "0.95", "CONTROLLER_KP": "0.002"},
        {"variant": "tactile_aware", "seed": 4, "out_dir": str(tmp_path)},
    )
    path = write_run_config(cfg, tmp_path / "run")
    again = load_run_config(path, env={})
    assert again.policy == cfg.policy
    assert again.controller == cfg.controller
    assert again.demo == cfg.demo
    assert again.eval == cfg.eval
    assert again.task_spec == cfg.task_spec
    assert config_dict(again) == config_dict(cfg)


def test_dispatch_exit_codes():
    ok = dispatch("_echo_cfg", 1, None)
    assert ok["ok"] and ok["exit_code"] == EXIT_OK and ok["value"] == 1
    assert dispatch("_bad_flag", None, None)["exit_code"] == EXIT_USAGE
    crash = dispatch("_crash", None, None)
    assert crash["exit_code"] == EXIT_FAILURE and "RuntimeError" in crash["error"]
    assert dispatch("no_such_command", None, None)["exit_code"] == EXIT_USAGE


def test_summary_line_for_failures():
    line = main.format_result_summary("train", {"ok": False, "error": "no data"})
    assert "no data" in line


@pytest.mark.parametrize(
    "argv",
    [
        ["rollout", "--n", "0"],
        ["collect", "--task", "juggle"],
        ["train", "--toy", "--profile", "full"],
    ],
)
def test_usage_errors_exit_with_2(argv, tmp_path):
    assert main.main([*argv, "--out", str(tmp_path)]) == EXIT_USAGE


def test_nothing_to_plot_or_evaluate(tmp_path):
    assert main.main(["plot", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main.main(["eval", "--out", str(tmp_path)]) == EXIT_USAGE


def test_train_without_dataset_fails(tmp_path):
    assert main.main(["train", "--toy", "--out", str(tmp_path)]) == EXIT_FAILURE


def test_overrides_map_n_per_command():
    args = SimpleNamespace(toy=True, profile=None, task=None, seed=1, out_dir=None, workers=None, variant=None, n=4, command="collect")
    assert main.overrides_from_args(args)["n_demos"] == 4
    args.command = "rollout"
    assert main.overrides_from_args(args)["n_rollouts"] == 4


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path, capsys):
    config = tmp_path / "toy.env"
    config.write_text("POLICY_TRAIN_ITERS=3\nPOLICY_BATCH_SIZE=4\nPOLICY_LOG_EVERY=1\nEVAL_ASSIST_UNTIL_GRASP=false\n")
    common = ["--out", str(tmp_path / "out"), "--toy", "--config", str(config), "--task", "fragile_pick"]

    assert main.main(["collect", "--n", "2", *common]) == EXIT_OK
    assert len(list((tmp_path / "out" / "dataset" / "fragile_pick").glob("demo_*"))) == 2

    assert main.main(["train", *common]) == EXIT_OK
    assert (tmp_path / "out" / "checkpoints" / "fragile_pick_farm.pt").is_file()

    assert main.main(["rollout", "--n", "1", *common]) == EXIT_OK
    assert main.main(["rollout", "--n", "1", "--policy", "expert", *common]) == EXIT_OK

    capsys.readouterr()
    assert main.main(["eval", "--compare", "farm,expert", "--json", *common]) == EXIT_OK
    result = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert {r["variant"] for r in result["rows"]} == {"farm", "expert"}
    assert (tmp_path / "out" / "eval" / "results.csv").is_file()

    assert main.main(["plot", *common]) == EXIT_OK
