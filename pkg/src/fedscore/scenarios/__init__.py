"""Bundled scenario files shipped with the package."""

from importlib import resources

BUNDLED = ("default", "attack", "noisy")


def bundled_path(name):
    """Filesystem path of a bundled scenario ("default", "attack", "noisy")."""
    if name not in BUNDLED:
        raise ValueError(f"no bundled scenario {name!r}; have {BUNDLED}")
    path = resources.files(__package__).joinpath(f"{name}.scenario")
    with resources.as_file(path) as concrete:
        return str(concrete)
