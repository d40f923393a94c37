# SPDX-FileCopyrightText: 2024-present Robin van der Noord <robinvandernoord@gmail.com>
#
# SPDX-License-Identifier: MIT
__version__ = "0.1.1"
