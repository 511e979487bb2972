#!/usr/bin/env python3
"""
Main entry point script for SusBayes.
"""

from susbayes.cli import main

if __name__ == '__main__':
    main()
