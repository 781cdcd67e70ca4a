import json
import os
import shutil
import unittest
from pkg_resources import resource_filename


class FileIOTestCase(unittest.TestCase):
    """Gives each test an empty reference/writes directory for command output."""

    def setUp(self):
        self._remove_writes()
        os.makedirs(get_fn('writes'))

    def tearDown(self):
        self._remove_writes()

    def _remove_writes(self):
        shutil.rmtree(get_fn('writes'), ignore_errors=True)

    def get_writes_dir(self):
        write_dir = get_fn('writes')
        if not os.path.exists(write_dir):
            os.makedirs(write_dir)
        return write_dir


def get_fn(filename, written=False):
    """Get the full path to one of the reference configurations shipped for testing

        These files are in gsde/tests/reference

    :param
        filename: str
            Name of file to load
        written: bool
            resolve inside the scratch writes/ directory instead

    :returns
        fn : str
            full path to file
    """
    parts = ('tests', 'reference', 'writes', filename) if written else ('tests', 'reference', filename)
    return resource_filename('gsde', os.path.join(*parts))


def load_reference(filename):
    """Raw (unnormalized) configuration dictionary of a JSON reference file"""
    with open(get_fn(filename)) as handle:
        return json.load(handle)
