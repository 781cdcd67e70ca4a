#!/usr/bin/python

def test_import():
    """
    Testing import of gsde.
    """
    import gsde
    import gsde.cli
    import gsde.backends.netcdf4
