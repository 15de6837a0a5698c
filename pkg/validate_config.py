#!/usr/bin/env python3
"""Validate configuration files for AutoCycle-VC."""

import argparse
import sys

from src.config import CONFIG_MODELS, read_config_file, validate_config


def _guess_kind(path: str) -> str | None:
    """Kind from the file name: ``train_vc.json`` -> ``train-vc``, ``ablation.json`` -> ``ablate``."""
    stem = path.rsplit("/", 1)[-1].split(".", 1)[0].replace("_", "-")
    if stem.startswith("ablat"):
        return "ablate"
    return stem if stem in CONFIG_MODELS else None


def main(argv: list[str] | None = None) -> int:
    """Validate configuration files and report any issues."""
    parser = argparse.ArgumentParser(description="Validate AutoCycle-VC configuration files")
    parser.add_argument("files", nargs="+", help="Config files to check")
    parser.add_argument(
        "--kind",
        choices=sorted(CONFIG_MODELS),
        help="Command the files configure (default: guessed from each file name)",
    )
    args = parser.parse_args(argv)

    print("AutoCycle-VC - Configuration Validator\n")

    errors = []
    warnings = []

    for path in args.files:
        kind = args.kind or _guess_kind(path)
        if kind is None:
            warnings.append(f"{path}: cannot tell which command it configures; pass --kind")
            continue

        model = CONFIG_MODELS[kind]
        print(f"Checking {path} as {kind} ({model.__name__})...")
        try:
            data = read_config_file(path)
        except FileNotFoundError as e:
            errors.append(f"{path}: {e}")
            continue
        except Exception as e:
            errors.append(f"{path}: failed to read: {e}")
            continue

        is_valid, error = validate_config(data, model)
        if is_valid:
            print(f"✓ {len(data)} key(s) set, the rest use defaults\n")
        else:
            errors.append(f"{path}: {error}")
            print()

    # Report results
    if errors:
        print("ERRORS:")
        for error in errors:
            print(f"  ✗ {error}")
        print()

    if warnings:
        print("WARNINGS:")
        for warning in warnings:
            print(f"  ⚠ {warning}")
        print()

    if not errors and not warnings:
        print("✓ Configuration is valid and ready to use!\n")
        return 0
    elif errors:
        print("✗ Configuration has errors that must be fixed.\n")
        return 1
    else:
        print("✓ Configuration is valid but has warnings (review recommended).\n")
        return 0


if __name__ == "__main__":
    sys.exit(main())
