"""Unit tests for configuration management."""

import json
from pathlib import Path

import pytest

import validate_config
from src.config import (
    CONFIG_ENV_VAR,
    CONFIG_MODELS,
    apply_overrides,
    dump_config,
    expand_env_refs,
    get_config_path,
    load_config,
    read_config_file,
    resolve_config,
    validate_config as validate,
)
from src.corpus import SyntheticCorpusConfig
from src.evaluation import AblationPlan
from src.speaker_encoder import SpeakerTrainConfig
from src.trainer import VcTrainConfig


CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


class TestValidateConfig:
    """Test cases for validating parsed config data."""

    def test_valid_train_vc(self):
        """Test a partial train-vc config with nested sections."""
        is_valid, error = validate({"iterations": 10, "weights": {"lambda_mfcc": 0.0}}, VcTrainConfig)
        assert is_valid
        assert error is None

    def test_unknown_key(self):
        """Test that unknown keys are errors and are named."""
        is_valid, error = validate({"iteration": 10}, VcTrainConfig)
        assert not is_valid
        assert '"iteration"' in error

    def test_nested_location(self):
        """Test that nested errors carry a dotted location."""
        is_valid, error = validate({"model": {"bottleneck": 7}}, VcTrainConfig)
        assert not is_valid
        assert "model.bottleneck" in error or '"model"' in error

    def test_out_of_range(self):
        """Test that range constraints are enforced."""
        is_valid, error = validate({"train_ratio": 1.5}, SyntheticCorpusConfig)
        assert not is_valid
        assert "train_ratio" in error

    def test_not_an_object(self):
        """Test that a JSON array is rejected."""
        is_valid, error = validate([1, 2], SpeakerTrainConfig)
        assert not is_valid
        assert "JSON object" in error

    def test_ablation_requires_corpus(self):
        """Test that an ablation plan without a corpus is invalid."""
        is_valid, error = validate({"spec": {"bottleneck_sizes": [16]}}, AblationPlan)
        assert not is_valid
        assert "corpus" in error


class TestReadConfigFile:
    """Test cases for reading config files."""

    def test_reads_and_substitutes(self, tmp_path, monkeypatch):
        """Test that ${VAR} references are replaced on read."""
        monkeypatch.setenv("CORPUS_ROOT", "/data/corpus")
        config_file = tmp_path / "ablation.json"
        config_file.write_text(json.dumps({"corpus": "${CORPUS_ROOT}/synthetic"}))

        assert read_config_file(config_file) == {"corpus": "/data/corpus/synthetic"}

    def test_file_not_found(self, tmp_path):
        """Test error when the file doesn't exist."""
        with pytest.raises(FileNotFoundError, match="Configuration file not found"):
            read_config_file(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        """Test error on malformed JSON."""
        config_file = tmp_path / "bad.json"
        config_file.write_text("{ not json }")
        with pytest.raises(json.JSONDecodeError, match="Invalid JSON"):
            read_config_file(config_file)

    def test_top_level_array(self, tmp_path):
        """Test error when the top level is not an object."""
        config_file = tmp_path / "list.json"
        config_file.write_text("[]")
        with pytest.raises(ValueError, match="must be a JSON object"):
            read_config_file(config_file)

    def test_path_expansion(self, tmp_path, monkeypatch):
        """Test that ~ is expanded."""
        monkeypatch.setenv("HOME", str(tmp_path))
        (tmp_path / "se.json").write_text(json.dumps({"epochs": 3}))
        assert read_config_file("~/se.json") == {"epochs": 3}


class TestLoadConfig:
    """Test cases for loading validated configs."""

    def test_load_train_se(self, tmp_path):
        """Test that file values override defaults and the rest are kept."""
        config_file = tmp_path / "train_se.json"
        config_file.write_text(json.dumps({"epochs": 3, "model": {"chunk_len": 4}}))

        cfg = load_config(config_file, SpeakerTrainConfig)
        assert cfg.epochs == 3
        assert cfg.model.chunk_len == 4
        assert cfg.alpha == SpeakerTrainConfig().alpha

    def test_invalid_content(self, tmp_path):
        """Test that a config failing validation raises ValueError naming the model."""
        config_file = tmp_path / "train_vc.json"
        config_file.write_text(json.dumps({"crop_frames": 100}))
        with pytest.raises(ValueError, match="Invalid VcTrainConfig configuration"):
            load_config(config_file, VcTrainConfig)

    def test_missing_env_var(self, tmp_path):
        """Test that an unset variable is reported by name."""
        config_file = tmp_path / "ablation.json"
        config_file.write_text(json.dumps({"corpus": "${AUTOCYCLE_TEST_UNSET}"}))
        with pytest.raises(ValueError, match="AUTOCYCLE_TEST_UNSET"):
            load_config(config_file, AblationPlan)

    @pytest.mark.parametrize("name,kind", [
        ("make_corpus.json", "make-corpus"),
        ("train_se.json", "train-se"),
        ("train_vc.json", "train-vc"),
        ("ablation.json", "ablate"),
    ])
    def test_shipped_configs_are_valid(self, name, kind):
        """Test that every example config in config/ loads."""
        cfg = load_config(CONFIG_DIR / name, CONFIG_MODELS[kind])
        assert isinstance(cfg, CONFIG_MODELS[kind])


class TestEnvVarSubstitution:
    """Test cases for environment references in config strings."""

    def test_substitute_string(self, monkeypatch):
        """Test expanding a variable inside a string."""
        monkeypatch.setenv("TEST_VAR", "test_value")
        assert expand_env_refs("prefix_${TEST_VAR}_suffix") == "prefix_test_value_suffix"

    def test_substitute_nested(self, monkeypatch):
        """Test expanding variables in nested dicts and lists."""
        monkeypatch.setenv("RUNS", "/tmp/runs")
        obj = {"corpus": "${RUNS}/corpus", "extra": ["${RUNS}", "plain"]}

        result = expand_env_refs(obj)
        assert result == {"corpus": "/tmp/runs/corpus", "extra": ["/tmp/runs", "plain"]}

    def test_default_when_unset(self, monkeypatch):
        """Test that ${VAR:-default} falls back only when the variable is unset."""
        monkeypatch.delenv("AUTOCYCLE_DATA", raising=False)
        assert expand_env_refs("${AUTOCYCLE_DATA:-runs}/corpus") == "runs/corpus"
        monkeypatch.setenv("AUTOCYCLE_DATA", "/data")
        assert expand_env_refs("${AUTOCYCLE_DATA:-runs}/corpus") == "/data/corpus"

    def test_missing_env_var_error(self):
        """Test error when a referenced variable without default doesn't exist."""
        with pytest.raises(ValueError) as exc_info:
            expand_env_refs("${NONEXISTENT_VAR}")
        assert "NONEXISTENT_VAR" in str(exc_info.value)
        assert "not set" in str(exc_info.value)

    def test_preserve_types(self):
        """Test that non-string types are preserved."""
        obj = {"number": 123, "boolean": True, "null": None, "array": [1, 2, 3]}
        assert expand_env_refs(obj) == obj

    def test_shipped_ablation_plan_uses_data_root(self, monkeypatch):
        """Test that the example ablation plan resolves its corpus under $AUTOCYCLE_DATA."""
        monkeypatch.setenv("AUTOCYCLE_DATA", "/srv/autocycle")
        plan = load_config(CONFIG_DIR / "ablation.json", AblationPlan)
        assert plan.corpus == "/srv/autocycle/corpus"


class TestChunkLenAlias:
    """Test cases for perturb.chunk_len in speaker-encoder configs."""

    def test_perturb_block_sets_model_chunk_len(self, tmp_path):
        """Test that a perturb block lands in model.chunk_len."""
        path = tmp_path / "train_se.json"
        path.write_text(json.dumps({"segment_frames": 64, "perturb": {"chunk_len": 4}}))

        cfg = load_config(path, SpeakerTrainConfig)
        assert cfg.model.chunk_len == 4
        assert "perturb" not in dump_config(cfg)

    def test_agreeing_values(self):
        """Test that giving both spellings with one value is accepted."""
        cfg = SpeakerTrainConfig.model_validate({"perturb": {"chunk_len": 16}, "model": {"chunk_len": 16}})
        assert cfg.model.chunk_len == 16

    def test_conflicting_values(self):
        """Test that the two spellings must agree."""
        with pytest.raises(ValueError, match="disagrees with model.chunk_len"):
            SpeakerTrainConfig.model_validate({"perturb": {"chunk_len": 4}, "model": {"chunk_len": 8}})

    def test_other_perturb_keys_rejected(self):
        """Test that the perturb block takes nothing but chunk_len."""
        with pytest.raises(ValueError, match="perturb"):
            SpeakerTrainConfig.model_validate({"perturb": {"rng_seed": 3}})


class TestOverrides:
    """Test cases for command-line overrides."""

    def test_top_level_and_dotted(self):
        """Test plain and dotted keys."""
        cfg = apply_overrides(VcTrainConfig(), {"iterations": 5, "weights.lambda_cycle": 0.0, "model.bottleneck": 16})

        assert cfg.iterations == 5
        assert cfg.weights.lambda_cycle == 0.0
        assert cfg.model.bottleneck == 16

    def test_none_leaves_field_alone(self):
        """Test that flags not given do not change the config."""
        base = VcTrainConfig(iterations=7)
        assert apply_overrides(base, {"iterations": None}) == base

    def test_unknown_key(self):
        """Test that overrides must name existing fields."""
        with pytest.raises(ValueError, match="Unknown configuration key"):
            apply_overrides(VcTrainConfig(), {"weights.lambda_x": 1.0})
        with pytest.raises(ValueError, match="Unknown configuration key"):
            apply_overrides(VcTrainConfig(), {"nothing.here": 1.0})

    def test_invalid_value(self):
        """Test that the overridden config is validated."""
        with pytest.raises(ValueError, match="after overrides"):
            apply_overrides(SpeakerTrainConfig(), {"alpha": 1.0})

    def test_dump_is_json_ready(self):
        """Test that a dumped config serializes."""
        dumped = dump_config(SpeakerTrainConfig())
        assert json.loads(json.dumps(dumped)) == dumped


class TestGetConfigPath:
    """Test cases for configuration path resolution."""

    def test_explicit_wins(self, monkeypatch, tmp_path):
        """Test that --config takes precedence over the environment."""
        monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "env.json"))
        assert Path(get_config_path(str(tmp_path / "flag.json"))) == tmp_path / "flag.json"

    def test_uses_env_var_when_set(self, monkeypatch, tmp_path):
        """Test that the environment variable is used without a flag."""
        monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "env.json"))
        assert Path(get_config_path()) == tmp_path / "env.json"

    def test_none_when_unset(self, monkeypatch):
        """Test that no flag and no variable means built-in defaults."""
        monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
        assert get_config_path() is None

    def test_relative_path_resolved(self, monkeypatch, tmp_path):
        """Test that relative paths are made absolute."""
        monkeypatch.chdir(tmp_path)
        assert get_config_path("cfg.json") == str(tmp_path.resolve() / "cfg.json")


class TestResolveConfig:
    """Test cases for defaults < file < flags precedence."""

    def test_defaults_only(self):
        """Test that no file and no flags give the model defaults."""
        assert resolve_config(SyntheticCorpusConfig, None, {}) == SyntheticCorpusConfig()

    def test_flag_beats_file(self, tmp_path):
        """Test that command-line values override file values."""
        config_file = tmp_path / "make_corpus.json"
        config_file.write_text(json.dumps({"speakers": 3, "utts_per_speaker": 7}))

        cfg = resolve_config(SyntheticCorpusConfig, str(config_file), {"speakers": 5, "seed": None})
        assert cfg.speakers == 5
        assert cfg.utts_per_speaker == 7
        assert cfg.seed == 0


class TestValidatorScript:
    """Test cases for the standalone config validator."""

    def test_shipped_configs(self, capsys):
        """Test that the example configs pass."""
        paths = [str(p) for p in sorted(CONFIG_DIR.glob("*.json"))]
        assert validate_config.main(paths) == 0
        assert "Configuration is valid" in capsys.readouterr().out

    def test_invalid_file(self, tmp_path, capsys):
        """Test that an invalid file fails with its error listed."""
        config_file = tmp_path / "train_vc.json"
        config_file.write_text(json.dumps({"iterations": 0}))

        assert validate_config.main([str(config_file)]) == 1
        out = capsys.readouterr().out
        assert "ERRORS:" in out
        assert "iterations" in out

    def test_unknown_kind_warns(self, tmp_path, capsys):
        """Test that a file name that names no command gives a warning."""
        config_file = tmp_path / "settings.json"
        config_file.write_text("{}")

        assert validate_config.main([str(config_file)]) == 0
        assert "pass --kind" in capsys.readouterr().out

    def test_explicit_kind(self, tmp_path):
        """Test --kind for files with arbitrary names."""
        config_file = tmp_path / "settings.json"
        config_file.write_text(json.dumps({"epochs": 2}))
        assert validate_config.main([str(config_file), "--kind", "train-se"]) == 0
