#pragma once

#ifndef SEMCSI_TEST_DATA_DIR
#error "SEMCSI_TEST_DATA_DIR must be defined by the build"
#endif
