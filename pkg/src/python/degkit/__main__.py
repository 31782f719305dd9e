"degkit command-line entry point."
import argparse
import configparser
import sys

from sourmash.logging import error

from . import COMMANDS, __version__
from .exceptions import DegkitError
from .utils import load_config, parse_bool


def build_parser():
    parser = argparse.ArgumentParser(
        prog="degkit", description="RNA degradation modeling toolkit"
    )
    parser.add_argument(
        "-v", "--version", action="version", version=f"degkit {__version__}"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    by_name = {}
    for cls in COMMANDS:
        sp = subparsers.add_parser(
            cls.command, help=cls.description, description=cls.description
        )
        sp.set_defaults(cmd=cls(sp))
        by_name[cls.command] = sp
    return parser, by_name


def _find_config(argv):
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def apply_config(subparser, path):
    """Use the key = value pairs in 'path' as defaults for 'subparser'.

    Options given on the command line still win. Options marked required
    are satisfied by a config value.
    """
    values = load_config(path)
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            subparser.error(f"unknown option '{key}' in config file '{path}'")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            try:
                value = parse_bool(value)
            except ValueError as exc:
                subparser.error(f"config file '{path}': {exc}")
        elif action.nargs in ("*", "+"):
            value = value.replace(",", " ").split()
        action.required = False
        defaults[key] = value
    subparser.set_defaults(**defaults)


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    argv = [str(a) for a in argv]
    parser, by_name = build_parser()

    config_path = _find_config(argv)
    if config_path and argv and argv[0] in by_name:
        try:
            apply_config(by_name[argv[0]], config_path)
        except OSError as exc:
            error("ERROR: cannot read config file: {}", str(exc))
            return 1
        except configparser.Error as exc:
            by_name[argv[0]].error(f"malformed config file '{config_path}': {exc}")

    args = parser.parse_args(argv)
    try:
        return args.cmd.main(args)
    except (DegkitError, OSError) as exc:
        error("ERROR: {}", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
