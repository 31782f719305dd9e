"Shared plumbing: worker pool, atomic output files, config files, seeds."
import configparser
import contextlib
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

from sourmash.logging import notify

DEFAULT_SEED = 7

_num_threads = 1


def get_max_cores():
    try:
        if "SLURM_CPUS_ON_NODE" in os.environ:
            return int(os.environ["SLURM_CPUS_ON_NODE"])
        elif "SLURM_JOB_CPUS_PER_NODE" in os.environ:
            cpus_per_node_str = os.environ["SLURM_JOB_CPUS_PER_NODE"]
            return int(cpus_per_node_str.split("x")[0])
        else:
            return os.cpu_count()
    except Exception:
        return os.cpu_count()


def set_thread_pool(user_cores):
    "Bound the worker threads used by parallel_map; 0/None means all cores."
    global _num_threads
    avail_threads = get_max_cores() or 1
    num_threads = min(avail_threads, user_cores) if user_cores else avail_threads
    if user_cores and user_cores > avail_threads:
        notify(
            f"warning: only {avail_threads} threads available, using {avail_threads}"
        )
    _num_threads = max(1, num_threads)
    return _num_threads


def get_num_threads():
    return _num_threads


def parallel_map(fn, items):
    """Order-preserving map over the worker pool.

    Results come back in input order, so reductions over them are
    deterministic regardless of the thread count.
    """
    items = list(items)
    if _num_threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=_num_threads) as executor:
        return list(executor.map(fn, items))


@contextlib.contextmanager
def atomic_write(path, mode="w", newline=None):
    "Write to a temporary file next to 'path', renaming it into place on success."
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".degkit-", dir=directory)
    try:
        if "b" in mode:
            fp = os.fdopen(fd, mode)
        else:
            fp = os.fdopen(fd, mode, newline=newline, encoding="utf-8")
        with fp:
            yield fp
        os.chmod(tmp_path, 0o644)
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_path)
        raise


def default_seed():
    "Global default seed: DEGKIT_SEED if set, else 7."
    value = os.environ.get("DEGKIT_SEED")
    if value is None or value.strip() == "":
        return DEFAULT_SEED
    return int(value)


def load_config(path):
    """Read a plain 'key = value' config file into a dict of strings.

    Keys may use '-' or '_'; both map onto argparse destinations.
    """
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    parser.optionxform = str
    with open(path, encoding="utf-8") as fp:
        parser.read_string("[degkit]\n" + fp.read(), source=str(path))
    return {
        key.strip().replace("-", "_"): value.strip()
        for key, value in parser.items("degkit")
    }


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")
